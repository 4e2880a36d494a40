//! Trains the desk preset, printing one line per epoch, and saves the
//! checkpoint and log.
//!
//!     cargo run --release --example train_desk -- /tmp/desk 5

use std::path::PathBuf;

use ptychodv::train::{train, Preset, TrainConfig};

fn main() -> ptychodv::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk_train".into()));
    let mut cfg = TrainConfig::preset(Preset::Desk);
    if let Some(epochs) = args.next() {
        cfg.epochs = epochs.parse().expect("epochs must be an integer");
    }
    let outcome = train(&cfg, Some(&out), |r| {
        println!("epoch {:>3}  loss {:.4e}  val nrmse {:.4}  {:.1}s", r.epoch, r.train_loss, r.val_nrmse, r.seconds)
    })?;
    println!("{} parameters, checkpoint in {}", outcome.model.params.numel(), out.join("checkpoint").display());
    Ok(())
}
