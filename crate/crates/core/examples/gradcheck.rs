//! The analytic WF direction against central differences of the data
//! fidelity, and a sampled gradient check through the whole network.

use ptychodv::autodiff::{grad_check_many, CoordSelection};
use ptychodv::net::{loss, model_forward, BoundParams, ModelConfig, PtychoDVModel, ViTConfig};
use ptychodv::physics::{data_fidelity, forward_amplitudes, make_probe, make_scan_grid, DiffractionSet, ProbeKind};
use ptychodv::solvers::wf_gradient;
use ptychodv::train::gen_sample;
use ptychodv::{Complex64, RealTensor};

fn main() -> ptychodv::Result<()> {
    let probe = make_probe(ProbeKind::A, 8, 0)?;
    let grid = make_scan_grid(16, 8, 4, 4)?;
    let truth = gen_sample(16, 1, 0)?.image;
    let data = DiffractionSet::noise_free(forward_amplitudes(&truth, &probe, &grid)?, &grid)?;

    let x = gen_sample(16, 1, 1)?.image;
    let g = wf_gradient(&x, &data, &probe, &grid, 1e-12)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in (0..x.len()).step_by(17) {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[j] += Complex64::new(0.0, h);
        minus.data_mut()[j] -= Complex64::new(0.0, h);
        let fd = (data_fidelity(&plus, &data, &probe, &grid, 1.0)? - data_fidelity(&minus, &data, &probe, &grid, 1.0)?)
            / (2.0 * h);
        worst = worst.max((fd - g.data()[j].im).abs() / g.max_abs());
    }
    println!("wf_gradient vs finite differences: {worst:.2e}");

    let config = ModelConfig {
        vit: ViTConfig {
            dim: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            bands: 2,
            patch: 8,
        },
        unroll: 1,
        cnn_width: 4,
        shared_refiner: true,
        eps: 1e-12,
    };
    let model = PtychoDVModel::new(config, 0)?;
    let names: Vec<String> = model.params.names().map(String::from).collect();
    let inputs: Vec<RealTensor> = names.iter().map(|n| model.params.get(n).cloned()).collect::<Result<_, _>>()?;
    let err = grad_check_many(
        |tape, vars| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            let out = model_forward(tape, &model, &bound, &data, &probe, &grid)?;
            loss(tape, out.image, out.patches, &truth, &grid, 1.0)
        },
        &inputs,
        1e-4,
        CoordSelection::Sampled { per_tensor: 2, seed: 0 },
    )?;
    println!("network over {} parameter tensors: {err:.2e}", names.len());
    Ok(())
}
