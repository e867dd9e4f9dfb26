//! Stacked log-mel spectrogram panels sharing one time axis.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use m2s_core::corpus::AudioBuffer;
use m2s_core::dsp::{Framing, LogMel};
use m2s_core::{Error, Result};

const N_MELS: usize = 80;
const SEPARATOR: u32 = 2;

/// Low-to-high colour ramp: dark blue, teal, yellow.
fn colour(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let stops = [(0.05, 0.03, 0.25), (0.1, 0.55, 0.55), (0.99, 0.9, 0.15)];
    let x = v * 2.0;
    let (a, b, t) = if x < 1.0 { (stops[0], stops[1], x) } else { (stops[1], stops[2], x - 1.0) };
    let mix = |p: f64, q: f64| ((p + (q - p) * t) * 255.0).round() as u8;
    Rgb([mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2)])
}

/// Renders one panel per input (top to bottom), 1 px per frame and mel bin,
/// low frequencies at the bottom. Each panel is scaled to its own range.
pub fn render_mel_panels(inputs: &[AudioBuffer]) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    if inputs.is_empty() {
        return Err(Error::validation("nothing to plot"));
    }
    let panels: Vec<Vec<Vec<f64>>> = inputs
        .iter()
        .map(|a| {
            let hop = (a.sample_rate() / 100) as usize;
            let win = (a.sample_rate() as usize * 25) / 1000;
            LogMel::new(a.sample_rate(), win.next_power_of_two(), win, hop, N_MELS)
                .frames(a.samples(), Framing::HopAligned)
        })
        .collect();
    let width = panels.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
    let height = inputs.len() as u32 * (N_MELS as u32 + SEPARATOR) - SEPARATOR;
    let mut img = ImageBuffer::from_pixel(width, height, Rgb([255, 255, 255]));
    for (p, frames) in panels.iter().enumerate() {
        let top = p as u32 * (N_MELS as u32 + SEPARATOR);
        let lo = frames.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = frames.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (t, f) in frames.iter().enumerate() {
            for (m, v) in f.iter().enumerate() {
                img.put_pixel(t as u32, top + (N_MELS - 1 - m) as u32, colour((v - lo) / span));
            }
        }
    }
    Ok(img)
}

pub fn plot_mel_panels(inputs: &[AudioBuffer], out: &Path) -> Result<()> {
    let img = render_mel_panels(inputs)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("writing {}: {e}", out.display())))
}
