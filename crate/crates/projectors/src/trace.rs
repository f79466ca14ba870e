use std::fs;
use std::io::Write;
use std::path::Path;

use crate::types::AttentionTrace;
use crate::ProjectorError;

/// Write one grayscale PGM per (layer, query) plus a per-layer aggregate,
/// each slice min-max normalized on its own. A flat slice maps to black.
pub fn export_attention_trace(trace: &AttentionTrace, dir: &Path) -> Result<(), ProjectorError> {
    fs::create_dir_all(dir)?;
    let (h, w) = trace.grid;
    for layer in 0..trace.layers {
        let mut agg = vec![0.0; h * w];
        for query in 0..trace.queries {
            let slice = trace.slice(layer, query);
            for (a, s) in agg.iter_mut().zip(slice) {
                *a += s;
            }
            write_pgm(
                &dir.join(format!("layer{layer}_query{query}.pgm")),
                (h, w),
                slice,
            )?;
        }
        write_pgm(&dir.join(format!("layer{layer}_aggregate.pgm")), (h, w), &agg)?;
    }
    Ok(())
}

fn write_pgm(path: &Path, (h, w): (usize, usize), values: &[f64]) -> Result<(), ProjectorError> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(&pixels)?;
    Ok(())
}
