use super::RenderError;

/// Front-to-back quadrature of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// `T_n (1 - exp(-sigma_n delta_n))` per sample.
    pub weights: Vec<f64>,
}

impl Composite {
    /// Alpha-over a constant background.
    pub fn over(&self, background: [f64; 3]) -> [f64; 3] {
        let t = 1.0 - self.opacity;
        [
            self.rgb[0] + t * background[0],
            self.rgb[1] + t * background[1],
            self.rgb[2] + t * background[2],
        ]
    }
}

fn validate(sigmas: &[f64], colors: &[[f64; 3]], deltas: &[f64]) -> Result<(), RenderError> {
    if sigmas.len() != colors.len() || sigmas.len() != deltas.len() {
        return Err(RenderError::LengthMismatch(format!(
            "{} densities, {} colors, {} segments",
            sigmas.len(),
            colors.len(),
            deltas.len()
        )));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(RenderError::NegativeDensity(*s));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0)) {
        return Err(RenderError::NegativeSegment(*d));
    }
    Ok(())
}

pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], deltas: &[f64]) -> Result<Composite, RenderError> {
    validate(sigmas, colors, deltas)?;
    let mut transmittance = 1.0;
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(sigmas.len());
    for ((s, c), d) in sigmas.iter().zip(colors).zip(deltas) {
        let survive = (-s * d).exp();
        let w = transmittance * (1.0 - survive);
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        weights.push(w);
        transmittance *= survive;
    }
    Ok(Composite {
        rgb,
        opacity: 1.0 - transmittance,
        weights,
    })
}

/// Gradients of the background-composited pixel with respect to every
/// density and color, contracted with `d_pixel`.
pub fn composite_backward(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    background: [f64; 3],
    d_pixel: [f64; 3],
) -> Result<(Vec<f64>, Vec<[f64; 3]>), RenderError> {
    let fwd = composite(sigmas, colors, deltas)?;
    let n = sigmas.len();
    let mut d_sigma = vec![0.0; n];
    let mut d_color = vec![[0.0; 3]; n];
    let t_end = 1.0 - fwd.opacity;
    // Running sum over later samples plus the background term.
    let mut tail = [
        t_end * background[0],
        t_end * background[1],
        t_end * background[2],
    ];
    let mut t_next = t_end;
    for k in (0..n).rev() {
        let w = fwd.weights[k];
        let c = colors[k];
        let mut g = 0.0;
        for ch in 0..3 {
            d_color[k][ch] = w * d_pixel[ch];
            g += d_pixel[ch] * (t_next * c[ch] - tail[ch]);
            tail[ch] += w * c[ch];
        }
        d_sigma[k] = deltas[k] * g;
        // T_k = T_{k+1} + w_k.
        t_next += w;
    }
    Ok((d_sigma, d_color))
}
