//! Round-trips an image sequence through the IDX byte format and
//! mean-pools the frames down to the recall protocol's working size.
//!
//! Run with: cargo run --example downsample_idx

use cbtlearn::io::{downsample_mean, read_idx_images, write_idx_images};
use cbtlearn::reservoir::{random_image_sequence, ImageSequence};
use cbtlearn::{Result, RngSeed};

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("frames.idx");

    // 20 frames at 28x28, the usual source size for handwritten digits.
    let seq = random_image_sequence(20, 28, 28, RngSeed(71))?;
    write_idx_images(&path, &seq)?;
    let bytes = std::fs::metadata(&path).expect("written file").len();
    println!(
        "wrote {} frames of {}x{} -> {bytes} bytes",
        seq.len(),
        28,
        28
    );

    // Bytes quantize to 1/255 steps, so the reload is close but not exact.
    let reloaded = read_idx_images(&path, usize::MAX)?;
    let mut worst = 0.0f64;
    for (a, b) in seq.frames().iter().zip(reloaded.frames()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            worst = worst.max((x - y).abs());
        }
    }
    println!(
        "worst pixel error after byte quantization: {worst:.6} (bound 1/510 = {:.6})",
        1.0 / 510.0
    );
    assert!(worst <= 1.0 / 510.0 + 1e-12);

    // Mean-pool to the 10x10 working shape; each output pixel averages its
    // (fractional) source area, so the frame mean is preserved exactly.
    let pooled: Vec<_> = reloaded
        .frames()
        .iter()
        .map(|f| downsample_mean(f, 10, 10))
        .collect::<Result<_>>()?;
    let pooled = ImageSequence::new(pooled)?;
    let src_mean: f64 = reloaded.frame(0).as_slice().iter().sum::<f64>() / 784.0;
    let dst_mean: f64 = pooled.frame(0).as_slice().iter().sum::<f64>() / 100.0;
    println!(
        "pooled to {}x{}; frame-0 mean {src_mean:.6} -> {dst_mean:.6}",
        pooled.frame_rows(),
        pooled.frame_cols()
    );
    assert!((src_mean - dst_mean).abs() < 1e-12);
    println!("area-weighted pooling preserves the frame mean");
    Ok(())
}
