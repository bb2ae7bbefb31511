//! The learnable field: pose feature extractor, deformation net, density
//! net and color net, evaluated as one fixed computation graph.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::PositionalEncoder;
use super::mlp::{sigmoid, softplus, Activation, Mlp, MlpGrads, MlpTrace};
use super::NetError;

/// Network shapes and encoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// Flattened axis-angle size of the non-root joints.
    pub pose_input_dim: usize,
    pub pose_hidden: Vec<usize>,
    pub pose_feature_dim: usize,
    pub deform_hidden: Vec<usize>,
    pub density_hidden: Vec<usize>,
    /// Hidden layer after which the encoded input is concatenated again.
    pub density_skip_after: Option<usize>,
    pub geometry_feature_dim: usize,
    pub color_hidden: Vec<usize>,
    pub coord_encoder: PositionalEncoder,
    pub dir_encoder: PositionalEncoder,
    /// Per-axis bound on the deformation offset `(u, v, l)`.
    pub deform_scale: [f64; 3],
}

impl FieldConfig {
    pub fn for_joints(joint_count: usize) -> Self {
        Self {
            pose_input_dim: 3 * joint_count.saturating_sub(1),
            pose_hidden: vec![128, 128],
            pose_feature_dim: 64,
            deform_hidden: vec![128; 4],
            density_hidden: vec![256; 8],
            density_skip_after: Some(4),
            geometry_feature_dim: 256,
            color_hidden: vec![128, 128],
            coord_encoder: PositionalEncoder::new(10, true),
            dir_encoder: PositionalEncoder::new(4, true),
            deform_scale: [0.05, 0.05, 0.02],
        }
    }

    fn coord_dim(&self) -> usize {
        self.coord_encoder.output_dim(3)
    }

    fn dir_dim(&self) -> usize {
        self.dir_encoder.output_dim(3)
    }
}

/// Which stages of the field are active. The default is the full wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSwitches {
    pub deform: bool,
    pub pose: bool,
    /// Force the distance coordinate to zero before every encoder.
    pub zero_distance: bool,
}

impl Default for FieldSwitches {
    fn default() -> Self {
        Self {
            deform: true,
            pose: true,
            zero_distance: false,
        }
    }
}

/// A batch of field queries.
#[derive(Debug, Clone)]
pub struct FieldInputs {
    /// `n x 3` field coordinates, `(u*, v*, l*)` or raw positions.
    pub coords: Array2<f64>,
    /// `n x 3` unit view directions.
    pub dirs: Array2<f64>,
    /// Row of `poses` conditioning each sample.
    pub sample_pose: Vec<usize>,
    /// `m x pose_input_dim` articulation vectors.
    pub poses: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct FieldOutputs {
    pub sigma: Array1<f64>,
    pub rgb: Array2<f64>,
    /// `n x 3` deformed coordinates that entered the density net.
    pub deformed: Array2<f64>,
}

#[derive(Debug, Clone)]
struct TapeData {
    switches: FieldSwitches,
    coords: Array2<f64>,
    sample_pose: Vec<usize>,
    pose_count: usize,
    pose_trace: Option<MlpTrace>,
    deform_trace: Option<MlpTrace>,
    deformed: Array2<f64>,
    density_trace: MlpTrace,
    color_trace: MlpTrace,
}

/// Recording of a forward pass, consumed by [`FieldNets::backward`].
#[derive(Debug, Clone, Default)]
pub struct FieldTape {
    data: Option<TapeData>,
}

impl FieldTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.data.is_some()
    }
}

/// Parameter gradients for every network, plus how many backward passes
/// were accumulated.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub pose: MlpGrads,
    pub deform: MlpGrads,
    pub density: MlpGrads,
    pub color: MlpGrads,
    pub count: usize,
}

impl FieldGrads {
    pub fn add_assign(&mut self, other: &FieldGrads) {
        self.pose.add_assign(&other.pose);
        self.deform.add_assign(&other.deform);
        self.density.add_assign(&other.density);
        self.color.add_assign(&other.color);
        self.count += other.count;
    }

    /// Same order as [`FieldNets::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.pose.tensors();
        out.extend(self.deform.tensors());
        out.extend(self.density.tensors());
        out.extend(self.color.tensors());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Gradients with respect to the query coordinates.
#[derive(Debug, Clone)]
pub struct FieldInputGrads {
    /// With respect to the undeformed coordinates.
    pub coords: Array2<f64>,
    /// With respect to the deformed coordinates entering the density net.
    pub deformed: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldNets {
    pub config: FieldConfig,
    pub pose_extractor: Mlp,
    pub deform_net: Mlp,
    pub density_net: Mlp,
    pub color_net: Mlp,
}

impl FieldNets {
    /// Random initialization from `seed`; the deformation output layer starts
    /// at zero so the initial deformation is the identity.
    pub fn new(config: FieldConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = |input: usize, hidden: &[usize], output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(output);
            w
        };
        let pf = config.pose_feature_dim;
        let pose_extractor = Mlp::new(
            &widths(config.pose_input_dim, &config.pose_hidden, pf),
            Activation::Relu,
            Activation::Identity,
            None,
            &mut rng,
        );
        let mut deform_net = Mlp::new(
            &widths(config.coord_dim() + pf, &config.deform_hidden, 3),
            Activation::Relu,
            Activation::Softsign,
            None,
            &mut rng,
        );
        deform_net.zero_output_layer();
        // Softplus for sigma is applied outside the net: the output layer
        // also carries the geometry feature.
        let density_net = Mlp::new(
            &widths(
                config.coord_dim() + pf,
                &config.density_hidden,
                1 + config.geometry_feature_dim,
            ),
            Activation::Relu,
            Activation::Identity,
            config.density_skip_after.map(|k| k + 1),
            &mut rng,
        );
        let color_net = Mlp::new(
            &widths(
                config.geometry_feature_dim + config.dir_dim() + pf,
                &config.color_hidden,
                3,
            ),
            Activation::Relu,
            Activation::Sigmoid,
            None,
            &mut rng,
        );
        Self {
            config,
            pose_extractor,
            deform_net,
            density_net,
            color_net,
        }
    }

    /// Zeroes the output layer of all four networks.
    pub fn zero_output_layers(&mut self) {
        self.pose_extractor.zero_output_layer();
        self.deform_net.zero_output_layer();
        self.density_net.zero_output_layer();
        self.color_net.zero_output_layer();
    }

    pub fn parameter_count(&self) -> usize {
        self.pose_extractor.parameter_count()
            + self.deform_net.parameter_count()
            + self.density_net.parameter_count()
            + self.color_net.parameter_count()
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, net) in self.named_nets() {
            out.extend(
                net.tensors()
                    .into_iter()
                    .map(|(n, shape, v)| (format!("{prefix}.{n}"), shape, v)),
            );
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.pose_extractor.tensors_mut();
        out.extend(self.deform_net.tensors_mut());
        out.extend(self.density_net.tensors_mut());
        out.extend(self.color_net.tensors_mut());
        out
    }

    fn named_nets(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("pose", &self.pose_extractor),
            ("deform", &self.deform_net),
            ("density", &self.density_net),
            ("color", &self.color_net),
        ]
    }

    pub fn zero_grads(&self) -> FieldGrads {
        FieldGrads {
            pose: self.pose_extractor.zero_grads(),
            deform: self.deform_net.zero_grads(),
            density: self.density_net.zero_grads(),
            color: self.color_net.zero_grads(),
            count: 0,
        }
    }

    fn check_pose_dim(&self, dim: usize) -> Result<(), NetError> {
        if dim != self.config.pose_input_dim {
            return Err(NetError::ShapeMismatch {
                what: "pose input",
                expected: self.config.pose_input_dim,
                actual: dim,
            });
        }
        Ok(())
    }

    /// Pose features for each row of `poses` (articulation vectors).
    pub fn pose_features_batch(&self, poses: ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
        self.check_pose_dim(poses.ncols())?;
        Ok(self.pose_extractor.infer(poses))
    }

    pub fn pose_features(&self, articulation: &[f64]) -> Result<Vec<f64>, NetError> {
        let x = Array2::from_shape_vec((1, articulation.len()), articulation.to_vec())
            .expect("one row");
        Ok(self.pose_features_batch(x.view())?.into_raw_vec_and_offset().0)
    }

    fn check_feature(&self, pose_feat: &[f64]) -> Result<(), NetError> {
        if pose_feat.len() != self.config.pose_feature_dim {
            return Err(NetError::ShapeMismatch {
                what: "pose feature",
                expected: self.config.pose_feature_dim,
                actual: pose_feat.len(),
            });
        }
        Ok(())
    }

    /// Deformed coordinate `coords + scale * softsign(D(gamma_u(coords), pose_feat))`.
    pub fn deform(&self, coords: [f64; 3], pose_feat: &[f64]) -> Result<[f64; 3], NetError> {
        self.check_feature(pose_feat)?;
        let x = self.deform_input(&row(&coords), &row(pose_feat));
        let out = self.deform_net.infer(x.view());
        let s = self.config.deform_scale;
        Ok([
            coords[0] + s[0] * out[[0, 0]],
            coords[1] + s[1] * out[[0, 1]],
            coords[2] + s[2] * out[[0, 2]],
        ])
    }

    /// Density and geometry feature at a deformed coordinate.
    pub fn density(&self, deformed: [f64; 3], pose_feat: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
        self.check_feature(pose_feat)?;
        let x = self.density_input(&row(&deformed), &row(pose_feat));
        let out = self.density_net.infer(x.view());
        let sigma = softplus(out[[0, 0]]);
        Ok((sigma, out.slice(s![0, 1..]).to_vec()))
    }

    /// View-dependent color in `[0,1]^3`.
    pub fn color(
        &self,
        geometry_feature: &[f64],
        dir: [f64; 3],
        pose_feat: &[f64],
    ) -> Result<[f64; 3], NetError> {
        self.check_feature(pose_feat)?;
        if geometry_feature.len() != self.config.geometry_feature_dim {
            return Err(NetError::ShapeMismatch {
                what: "geometry feature",
                expected: self.config.geometry_feature_dim,
                actual: geometry_feature.len(),
            });
        }
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(NetError::NonUnitDirection(norm));
        }
        let x = self.color_input(&row(geometry_feature), &row(&dir), &row(pose_feat));
        let out = self.color_net.infer(x.view());
        Ok([out[[0, 0]], out[[0, 1]], out[[0, 2]]])
    }

    pub fn deform_input(&self, coords: &Array2<f64>, pf: &Array2<f64>) -> Array2<f64> {
        let enc = self.config.coord_encoder.encode_rows(coords.view());
        concatenate(Axis(1), &[enc.view(), pf.view()]).expect("rows match")
    }

    pub fn density_input(&self, deformed: &Array2<f64>, pf: &Array2<f64>) -> Array2<f64> {
        self.deform_input(deformed, pf)
    }

    pub fn color_input(&self, feat: &Array2<f64>, dirs: &Array2<f64>, pf: &Array2<f64>) -> Array2<f64> {
        let enc = self.config.dir_encoder.encode_rows(dirs.view());
        concatenate(Axis(1), &[feat.view(), enc.view(), pf.view()]).expect("rows match")
    }

    fn validate_inputs(&self, inputs: &FieldInputs) -> Result<(), NetError> {
        let n = inputs.coords.nrows();
        if inputs.coords.ncols() != 3 || inputs.dirs.ncols() != 3 {
            return Err(NetError::ShapeMismatch {
                what: "coordinate columns",
                expected: 3,
                actual: inputs.coords.ncols().max(inputs.dirs.ncols()),
            });
        }
        if inputs.dirs.nrows() != n || inputs.sample_pose.len() != n {
            return Err(NetError::ShapeMismatch {
                what: "sample count",
                expected: n,
                actual: inputs.dirs.nrows().min(inputs.sample_pose.len()),
            });
        }
        self.check_pose_dim(inputs.poses.ncols())?;
        if let Some(&bad) = inputs.sample_pose.iter().find(|&&p| p >= inputs.poses.nrows()) {
            return Err(NetError::ShapeMismatch {
                what: "pose index",
                expected: inputs.poses.nrows(),
                actual: bad,
            });
        }
        Ok(())
    }

    /// Evaluates density and color for every query. When `tape` is given,
    /// the intermediates needed by [`FieldNets::backward`] are recorded.
    pub fn forward(
        &self,
        inputs: &FieldInputs,
        switches: FieldSwitches,
        tape: Option<&mut FieldTape>,
    ) -> Result<FieldOutputs, NetError> {
        self.validate_inputs(inputs)?;
        let n = inputs.coords.nrows();
        let pf_dim = self.config.pose_feature_dim;
        let record = tape.is_some();

        let (frame_pf, pose_trace) = if switches.pose {
            if record {
                let (y, t) = self.pose_extractor.forward(inputs.poses.view());
                (y, Some(t))
            } else {
                (self.pose_extractor.infer(inputs.poses.view()), None)
            }
        } else {
            (Array2::zeros((inputs.poses.nrows(), pf_dim)), None)
        };
        let pf = frame_pf.select(Axis(0), &inputs.sample_pose);

        let mut coords = inputs.coords.clone();
        if switches.zero_distance {
            coords.column_mut(2).fill(0.0);
        }

        let (mut deformed, deform_trace) = if switches.deform {
            let x = self.deform_input(&coords, &pf);
            let (out, trace) = if record {
                let (y, t) = self.deform_net.forward(x.view());
                (y, Some(t))
            } else {
                (self.deform_net.infer(x.view()), None)
            };
            let mut d = coords.clone();
            for k in 0..3 {
                let scale = self.config.deform_scale[k];
                d.column_mut(k)
                    .zip_mut_with(&out.column(k), |dv, o| *dv += scale * o);
            }
            (d, trace)
        } else {
            (coords.clone(), None)
        };
        if switches.zero_distance {
            deformed.column_mut(2).fill(0.0);
        }

        let xd = self.density_input(&deformed, &pf);
        let (dens, density_trace) = if record {
            let (y, t) = self.density_net.forward(xd.view());
            (y, Some(t))
        } else {
            (self.density_net.infer(xd.view()), None)
        };
        let sigma = dens.column(0).mapv(softplus);
        let feat = dens.slice(s![.., 1..]).to_owned();

        let xc = self.color_input(&feat, &inputs.dirs, &pf);
        let (rgb, color_trace) = if record {
            let (y, t) = self.color_net.forward(xc.view());
            (y, Some(t))
        } else {
            (self.color_net.infer(xc.view()), None)
        };

        if let Some(tape) = tape {
            tape.data = Some(TapeData {
                switches,
                coords,
                sample_pose: inputs.sample_pose.clone(),
                pose_count: inputs.poses.nrows(),
                pose_trace,
                deform_trace,
                deformed: deformed.clone(),
                density_trace: density_trace.expect("recorded"),
                color_trace: color_trace.expect("recorded"),
            });
        }
        debug_assert_eq!(sigma.len(), n);
        Ok(FieldOutputs {
            sigma,
            rgb,
            deformed,
        })
    }

    /// Reverse pass over a recorded forward. Parameter gradients are
    /// accumulated into `grads`.
    pub fn backward(
        &self,
        tape: &FieldTape,
        d_sigma: &Array1<f64>,
        d_rgb: &Array2<f64>,
        grads: &mut FieldGrads,
    ) -> Result<FieldInputGrads, NetError> {
        let t = tape.data.as_ref().ok_or(NetError::NoForwardPass)?;
        let n = t.coords.nrows();
        if d_sigma.len() != n || d_rgb.dim() != (n, 3) {
            return Err(NetError::ShapeMismatch {
                what: "output gradient rows",
                expected: n,
                actual: d_sigma.len(),
            });
        }
        let cfg = &self.config;
        let g_dim = cfg.geometry_feature_dim;
        let dd = cfg.dir_dim();
        let cd = cfg.coord_dim();
        let mut d_pf = Array2::<f64>::zeros((n, cfg.pose_feature_dim));

        // Color.
        let gxc = self
            .color_net
            .backward(&t.color_trace, d_rgb.view(), &mut grads.color);
        let d_feat = gxc.slice(s![.., ..g_dim]);
        d_pf += &gxc.slice(s![.., g_dim + dd..]);

        // Density head: sigma = softplus(raw0), feature = raw[1..].
        let raw = t.density_trace.output();
        let mut d_raw = Array2::<f64>::zeros(raw.raw_dim());
        for i in 0..n {
            d_raw[[i, 0]] = d_sigma[i] * sigmoid(raw[[i, 0]]);
        }
        d_raw.slice_mut(s![.., 1..]).assign(&d_feat);
        let gxs = self
            .density_net
            .backward(&t.density_trace, d_raw.view(), &mut grads.density);
        d_pf += &gxs.slice(s![.., cd..]);
        let mut d_deformed = cfg
            .coord_encoder
            .backward_rows(t.deformed.view(), gxs.slice(s![.., ..cd]));
        if t.switches.zero_distance {
            d_deformed.column_mut(2).fill(0.0);
        }

        // Deformation.
        let mut d_coords = d_deformed.clone();
        if let Some(trace) = &t.deform_trace {
            let mut d_out = d_deformed.clone();
            for k in 0..3 {
                d_out.column_mut(k).mapv_inplace(|v| v * cfg.deform_scale[k]);
            }
            let gxd = self.deform_net.backward(trace, d_out.view(), &mut grads.deform);
            d_pf += &gxd.slice(s![.., cd..]);
            d_coords += &cfg
                .coord_encoder
                .backward_rows(t.coords.view(), gxd.slice(s![.., ..cd]));
        }
        if t.switches.zero_distance {
            d_coords.column_mut(2).fill(0.0);
        }

        // Pose features, scattered back to their frames.
        if let Some(trace) = &t.pose_trace {
            let mut d_frame = Array2::<f64>::zeros((t.pose_count, cfg.pose_feature_dim));
            for (i, &p) in t.sample_pose.iter().enumerate() {
                let mut r = d_frame.row_mut(p);
                r += &d_pf.row(i);
            }
            self.pose_extractor
                .backward(trace, d_frame.view(), &mut grads.pose);
        }
        grads.count += 1;
        Ok(FieldInputGrads {
            coords: d_coords,
            deformed: d_deformed,
        })
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("one row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn small_config() -> FieldConfig {
        FieldConfig {
            pose_input_dim: 6,
            pose_hidden: vec![8],
            pose_feature_dim: 4,
            deform_hidden: vec![8, 8],
            density_hidden: vec![8, 8, 8],
            density_skip_after: Some(1),
            geometry_feature_dim: 5,
            color_hidden: vec![8],
            coord_encoder: PositionalEncoder::new(3, true),
            dir_encoder: PositionalEncoder::new(2, true),
            deform_scale: [0.05, 0.05, 0.02],
        }
    }

    fn inputs(rng: &mut ChaCha8Rng, n: usize, m: usize, dim: usize) -> FieldInputs {
        let coords = Array2::from_shape_fn((n, 3), |(_, k)| {
            if k < 2 {
                rng.gen_range(0.0..1.0)
            } else {
                rng.gen_range(0.0..0.1)
            }
        });
        let mut dirs = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0f64..1.0));
        for mut r in dirs.rows_mut() {
            let norm = r.dot(&r).sqrt();
            r /= norm;
        }
        FieldInputs {
            coords,
            dirs,
            sample_pose: (0..n).map(|i| i % m).collect(),
            poses: Array2::from_shape_fn((m, dim), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn default_architecture_dimensions() {
        let cfg = FieldConfig::for_joints(11);
        let nets = FieldNets::new(cfg, 0);
        assert_eq!(nets.pose_extractor.input_dim(), 30);
        assert_eq!(nets.pose_extractor.output_dim(), 64);
        assert_eq!(nets.deform_net.input_dim(), 63 + 64);
        assert_eq!(nets.deform_net.layers.len(), 5);
        assert_eq!(nets.density_net.layers.len(), 9);
        assert_eq!(nets.density_net.layers[5].input_dim(), 256 + 127);
        assert_eq!(nets.density_net.output_dim(), 257);
        assert_eq!(nets.color_net.input_dim(), 256 + 27 + 64);
        assert_eq!(nets.color_net.layers.len(), 3);
    }

    #[test]
    fn fresh_deformation_is_identity() {
        let nets = FieldNets::new(small_config(), 3);
        let pf = vec![0.3, -0.2, 0.1, 0.9];
        assert_eq!(nets.deform([0.25, 0.5, 0.01], &pf).unwrap(), [0.25, 0.5, 0.01]);
    }

    #[test]
    fn zero_output_layers_give_constant_outputs() {
        let mut nets = FieldNets::new(small_config(), 3);
        nets.zero_output_layers();
        let pf = nets.pose_features(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert!(pf.iter().all(|v| *v == 0.0));
        let (sigma, feat) = nets.density([0.2, 0.3, 0.04], &pf).unwrap();
        assert_eq!(sigma, std::f64::consts::LN_2);
        assert!(feat.iter().all(|v| *v == 0.0));
        assert_eq!(nets.color(&feat, [0.0, 0.0, 1.0], &pf).unwrap(), [0.5; 3]);
    }

    #[test]
    fn non_unit_direction_is_rejected() {
        let nets = FieldNets::new(small_config(), 3);
        let err = nets.color(&[0.0; 5], [0.0, 0.0, 2.0], &[0.0; 4]).unwrap_err();
        assert!(matches!(err, NetError::NonUnitDirection(_)));
    }

    #[test]
    fn backward_without_forward_fails() {
        let nets = FieldNets::new(small_config(), 3);
        let mut g = nets.zero_grads();
        let err = nets
            .backward(&FieldTape::new(), &Array1::zeros(0), &Array2::zeros((0, 3)), &mut g)
            .unwrap_err();
        assert_eq!(err, NetError::NoForwardPass);
    }

    #[test]
    fn batched_forward_matches_single_sample_ops() {
        let mut nets = FieldNets::new(small_config(), 9);
        // Make the deformation non-trivial.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let inp = inputs(&mut rng, 5, 2, 6);
        let out = nets.forward(&inp, FieldSwitches::default(), None).unwrap();
        for i in 0..5 {
            let pf = nets
                .pose_features(&inp.poses.row(inp.sample_pose[i]).to_vec())
                .unwrap();
            let c = [inp.coords[[i, 0]], inp.coords[[i, 1]], inp.coords[[i, 2]]];
            let d = nets.deform(c, &pf).unwrap();
            let (sigma, feat) = nets.density(d, &pf).unwrap();
            let dir = [inp.dirs[[i, 0]], inp.dirs[[i, 1]], inp.dirs[[i, 2]]];
            let rgb = nets.color(&feat, dir, &pf).unwrap();
            assert!((sigma - out.sigma[i]).abs() < 1e-12);
            for k in 0..3 {
                assert!((d[k] - out.deformed[[i, k]]).abs() < 1e-12);
                assert!((rgb[k] - out.rgb[[i, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deformation_stays_bounded() {
        let mut nets = FieldNets::new(small_config(), 1);
        for v in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut() {
            *v = 50.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inp = inputs(&mut rng, 200, 3, 6);
        let out = nets.forward(&inp, FieldSwitches::default(), None).unwrap();
        let s = nets.config.deform_scale;
        for i in 0..200 {
            for k in 0..3 {
                assert!((out.deformed[[i, k]] - inp.coords[[i, k]]).abs() <= s[k]);
            }
            assert!(out.deformed[[i, 0]] >= -s[0] && out.deformed[[i, 0]] <= 1.0 + s[0]);
            assert!(out.sigma[i] >= 0.0);
            assert!(out.rgb.row(i).iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn switches_alter_only_their_stage() {
        let mut nets = FieldNets::new(small_config(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for v in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let inp = inputs(&mut rng, 6, 2, 6);
        let no_deform = FieldSwitches {
            deform: false,
            ..Default::default()
        };
        let out = nets.forward(&inp, no_deform, None).unwrap();
        assert_eq!(out.deformed, inp.coords);

        let naked = FieldSwitches {
            zero_distance: true,
            ..Default::default()
        };
        let out = nets.forward(&inp, naked, None).unwrap();
        assert!(out.deformed.column(2).iter().all(|v| *v == 0.0));

        let no_pose = FieldSwitches {
            pose: false,
            ..Default::default()
        };
        let mut other = inp.clone();
        other.poses.mapv_inplace(|v| v * -3.0 + 0.5);
        let a = nets.forward(&inp, no_pose, None).unwrap();
        let b = nets.forward(&other, no_pose, None).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.rgb, b.rgb);
    }

    /// Scalar objective used by the gradient checks.
    fn objective(nets: &FieldNets, inp: &FieldInputs, sw: FieldSwitches, ws: &Array1<f64>, wc: &Array2<f64>) -> f64 {
        let out = nets.forward(inp, sw, None).unwrap();
        out.sigma.dot(ws) + (&out.rgb * wc).sum()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for (seed, sw) in [
            (1, FieldSwitches::default()),
            (2, FieldSwitches { zero_distance: true, ..Default::default() }),
            (3, FieldSwitches { deform: false, ..Default::default() }),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut nets = FieldNets::new(small_config(), seed);
            for v in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let inp = inputs(&mut rng, 7, 3, 6);
            let ws = Array1::from_shape_fn(7, |_| rng.gen_range(-1.0..1.0));
            let wc = Array2::from_shape_fn((7, 3), |_| rng.gen_range(-1.0..1.0));
            let mut tape = FieldTape::new();
            nets.forward(&inp, sw, Some(&mut tape)).unwrap();
            let mut grads = nets.zero_grads();
            nets.backward(&tape, &ws, &wc, &mut grads).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            let h = 1e-6;
            let tensor_count = analytic.len();
            for ti in 0..tensor_count {
                let len = analytic[ti].len();
                for idx in [0, len / 2, len - 1] {
                    let mut p = nets.clone();
                    p.tensors_mut()[ti][idx] += h;
                    let mut q = nets.clone();
                    q.tensors_mut()[ti][idx] -= h;
                    let fd = (objective(&p, &inp, sw, &ws, &wc) - objective(&q, &inp, sw, &ws, &wc)) / (2.0 * h);
                    let a = analytic[ti][idx];
                    assert!(
                        (fd - a).abs() <= (1e-6f64).max(1e-4 * fd.abs().max(a.abs())),
                        "tensor {ti} idx {idx}: fd {fd} analytic {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn coordinate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut nets = FieldNets::new(small_config(), 17);
        for v in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let inp = inputs(&mut rng, 4, 2, 6);
        let ws = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let wc = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let sw = FieldSwitches::default();
        let mut tape = FieldTape::new();
        nets.forward(&inp, sw, Some(&mut tape)).unwrap();
        let mut grads = nets.zero_grads();
        let g = nets.backward(&tape, &ws, &wc, &mut grads).unwrap();
        let h = 1e-7;
        for i in 0..4 {
            for k in 0..3 {
                let mut p = inp.clone();
                p.coords[[i, k]] += h;
                let mut q = inp.clone();
                q.coords[[i, k]] -= h;
                let fd = (objective(&nets, &p, sw, &ws, &wc) - objective(&nets, &q, sw, &ws, &wc)) / (2.0 * h);
                let a = g.coords[[i, k]];
                assert!((fd - a).abs() <= (1e-6f64).max(1e-4 * fd.abs().max(a.abs())), "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn split_batches_accumulate_to_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let nets = FieldNets::new(small_config(), 21);
        let inp = inputs(&mut rng, 8, 2, 6);
        let ws = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let wc = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        let sw = FieldSwitches::default();

        let mut full = nets.zero_grads();
        let mut tape = FieldTape::new();
        nets.forward(&inp, sw, Some(&mut tape)).unwrap();
        nets.backward(&tape, &ws, &wc, &mut full).unwrap();

        let mut halves = nets.zero_grads();
        for range in [0..4, 4..8] {
            let part = FieldInputs {
                coords: inp.coords.slice(s![range.clone(), ..]).to_owned(),
                dirs: inp.dirs.slice(s![range.clone(), ..]).to_owned(),
                sample_pose: inp.sample_pose[range.clone()].to_vec(),
                poses: inp.poses.clone(),
            };
            let mut tape = FieldTape::new();
            nets.forward(&part, sw, Some(&mut tape)).unwrap();
            nets.backward(
                &tape,
                &ws.slice(s![range.clone()]).to_owned(),
                &wc.slice(s![range.clone(), ..]).to_owned(),
                &mut halves,
            )
            .unwrap();
        }
        for (a, b) in full.tensors().iter().zip(halves.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
