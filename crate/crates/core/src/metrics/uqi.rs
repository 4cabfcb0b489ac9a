use crate::data::ImageBuffer;
use crate::error::{Error, Result};

const WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UqiScore {
    pub value: f64,
    /// Windows whose index was undefined and left out of the mean.
    pub skipped: usize,
}

/// Index of one window, or `None` when it is undefined.
///
/// Where the closed form `4 s_ab m_a m_b / ((s_a^2 + s_b^2)(m_a^2 + m_b^2))`
/// has a zero denominator, the window is scored factor by factor
/// (correlation x luminance x contrast): a factor whose two statistics are
/// both zero compares equal quantities and counts as 1.
fn window_index(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let d = n - 1.0;
    let (va, vb, cov) = (va / d, vb / d, cov / d);
    let denom = (va + vb) * (ma * ma + mb * mb);
    if denom > 0.0 {
        return Some(4.0 * cov * ma * mb / denom);
    }
    if a == b {
        return Some(1.0);
    }
    let luminance = if ma == 0.0 && mb == 0.0 {
        1.0
    } else {
        2.0 * ma * mb / (ma * ma + mb * mb)
    };
    let (sa, sb) = (va.sqrt(), vb.sqrt());
    let (correlation, contrast) = if va == 0.0 && vb == 0.0 {
        (1.0, 1.0)
    } else if va > 0.0 && vb > 0.0 {
        (cov / (sa * sb), 2.0 * sa * sb / (va + vb))
    } else {
        return None;
    };
    Some(correlation * luminance * contrast)
}

/// Mean index over all sliding 8x8 windows (stride 1) of two planes.
pub fn uqi_plane(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<UqiScore> {
    if a.len() != height * width || b.len() != a.len() {
        return Err(Error::Shape("plane sizes differ".into()));
    }
    if height < WINDOW || width < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {height}x{width} is smaller than the {WINDOW}x{WINDOW} UQI window"
        )));
    }
    let mut wa = vec![0.0; WINDOW * WINDOW];
    let mut wb = vec![0.0; WINDOW * WINDOW];
    let (mut total, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for y0 in 0..=height - WINDOW {
        for x0 in 0..=width - WINDOW {
            for i in 0..WINDOW {
                let src = (y0 + i) * width + x0;
                wa[i * WINDOW..(i + 1) * WINDOW].copy_from_slice(&a[src..src + WINDOW]);
                wb[i * WINDOW..(i + 1) * WINDOW].copy_from_slice(&b[src..src + WINDOW]);
            }
            match window_index(&wa, &wb) {
                Some(q) => {
                    total += q;
                    count += 1;
                }
                None => skipped += 1,
            }
        }
    }
    let value = if count == 0 { f64::NAN } else { total / count as f64 };
    Ok(UqiScore { value, skipped })
}

/// Mean over windows and the three channels.
pub fn uqi(a: &ImageBuffer, b: &ImageBuffer) -> Result<UqiScore> {
    if !a.same_dims(b) {
        return Err(Error::Shape("images differ in size".into()));
    }
    let (mut total, mut skipped) = (0.0, 0);
    for c in 0..3 {
        let s = uqi_plane(&a.channel(c), &b.channel(c), a.height(), a.width())?;
        total += s.value;
        skipped += s.skipped;
    }
    Ok(UqiScore {
        value: total / 3.0,
        skipped,
    })
}
