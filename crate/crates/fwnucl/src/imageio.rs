//! Binary PGM (P5) / PPM (P6) emission with maxval 255, plus a heatmap
//! mode that rescales |delta| so its maximum maps to 255 and records the
//! scale factor in the file's comment line.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use std::io::{BufRead, Write};

// Round half up to an 8-bit value: 0.5 -> 128.
fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn header(w: &mut impl Write, x: &ImageTensor, comment: Option<&str>) -> Result<&'static str> {
    let magic = match x.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "image emission supports 1 or 3 channels, got {c}"
            )))
        }
    };
    writeln!(w, "{magic}")?;
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{} {}", x.width(), x.height())?;
    writeln!(w, "255")?;
    Ok(magic)
}

/// Write an image with entries in [0,1]; values are clamped then
/// quantized. PGM for a single channel, PPM (interleaved RGB) for three.
pub fn write_image(w: &mut impl Write, x: &ImageTensor) -> Result<()> {
    header(w, x, None)?;
    write_pixels(w, x, 1.0)
}

/// Write `|delta|` rescaled so the maximum magnitude maps to 255; the
/// scale factor is recorded as `# max=<value>`. A zero perturbation
/// writes all-zero bytes with `# max=0`.
pub fn write_heatmap(w: &mut impl Write, delta: &ImageTensor) -> Result<()> {
    let abs = delta.map(f64::abs);
    let max = abs.linf_norm();
    let comment = format!("max={max}");
    header(w, &abs, Some(&comment))?;
    if max == 0.0 {
        write_pixels(w, &abs, 1.0)
    } else {
        write_pixels(w, &abs, 1.0 / max)
    }
}

fn write_pixels(w: &mut impl Write, x: &ImageTensor, scale: f64) -> Result<()> {
    let (c, h, ww) = x.shape();
    let mut bytes = Vec::with_capacity(c * h * ww);
    for y in 0..h {
        for xx in 0..ww {
            for ch in 0..c {
                bytes.push(quantize((x.at(ch, y, xx) * scale).clamp(0.0, 1.0)));
            }
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Read back a binary PGM/PPM written by this module (values map to
/// [0,1]; the comment line, if any, is ignored).
pub fn read_image(r: &mut impl BufRead) -> Result<ImageTensor> {
    let mut magic = String::new();
    r.read_line(&mut magic)?;
    let channels = match magic.trim() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Parse(format!("unsupported magic {other:?}"))),
    };
    let mut line = String::new();
    loop {
        line.clear();
        r.read_line(&mut line)?;
        if !line.trim_start().starts_with('#') {
            break;
        }
    }
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dims: {e}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Parse("expected width and height".into()));
    }
    let (w, h) = (dims[0], dims[1]);
    let mut maxval = String::new();
    r.read_line(&mut maxval)?;
    if maxval.trim() != "255" {
        return Err(Error::Parse(format!("expected maxval 255, got {maxval:?}")));
    }
    let mut bytes = vec![0u8; channels * h * w];
    r.read_exact(&mut bytes)?;
    let mut t = ImageTensor::zeros(channels, h, w);
    let mut i = 0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                t.set(c, y, x, bytes[i] as f64 / 255.0);
                i += 1;
            }
        }
    }
    Ok(t)
}
