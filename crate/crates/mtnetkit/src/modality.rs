//! Modality-aware feature refinement and cross-modal fusion.
//!
//! Two cooperating mechanisms combine the RGB and thermal feature maps
//! before the transformer sees them:
//!
//! * **channel aggregation/distribution** — both modalities are pooled into
//!   one global descriptor (`gap(f_rgb + f_th)` through a shared FC), which
//!   two per-modality FCs turn into sigmoid channel gates; each modality's
//!   map is rescaled channel-wise by its own gate. Template and search
//!   paths carry independent parameter sets.
//! * **spatial similarity perception** — on the search path only, each
//!   modality's refined template acts as a correlation kernel over its
//!   refined search map; the raw response is upsampled, convolved 3x3 and
//!   squashed to a per-pixel reliability map in (0,1), consumed as a
//!   residual gate on the search features.
//!
//! Outputs: an augmented template `f_rgb_z + f_th_z` and an augmented
//! search map `(f_rgb_x*S_rgb + f_rgb_x) + (f_th_x*S_th + f_th_x)`.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;

/// The four per-modality feature maps the backbone produces for one frame
/// pair: template and search, RGB and thermal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQuad {
    pub rgb_template: Tensor,
    pub thermal_template: Tensor,
    pub rgb_search: Tensor,
    pub thermal_search: Tensor,
}

impl FeatureQuad {
    pub fn new(
        rgb_template: Tensor,
        thermal_template: Tensor,
        rgb_search: Tensor,
        thermal_search: Tensor,
    ) -> Result<Self, Error> {
        for (name, t) in [
            ("rgb_template", &rgb_template),
            ("thermal_template", &thermal_template),
            ("rgb_search", &rgb_search),
            ("thermal_search", &thermal_search),
        ] {
            if t.rank() != 3 {
                return Err(Error::Data(format!("{name} must be [C,h,w], got {:?}", t.shape())));
            }
        }
        let c = rgb_template.shape()[0];
        if [&thermal_template, &rgb_search, &thermal_search]
            .iter()
            .any(|t| t.shape()[0] != c)
        {
            return Err(Error::Data("all four maps must share the channel count".into()));
        }
        if rgb_template.shape() != thermal_template.shape() {
            return Err(Error::Data("template maps must share spatial size".into()));
        }
        if rgb_search.shape() != thermal_search.shape() {
            return Err(Error::Data("search maps must share spatial size".into()));
        }
        Ok(FeatureQuad { rgb_template, thermal_template, rgb_search, thermal_search })
    }

    pub fn channels(&self) -> usize {
        self.rgb_template.shape()[0]
    }
}

/// Which modality a per-modality operation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Thermal,
}

/// Channel gating parameters: one aggregation FC shared by both modalities
/// and one distribution FC per modality. Template and search paths each own
/// a full, independent set of these.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGateParams {
    pub w_agg: Tensor,
    pub b_agg: Tensor,
    pub w_rgb: Tensor,
    pub b_rgb: Tensor,
    pub w_th: Tensor,
    pub b_th: Tensor,
}

/// Width of the aggregated channel descriptor for a given channel count:
/// C/4 with a floor of 8.
pub fn reduced_dim(channels: usize) -> usize {
    (channels / 4).max(8)
}

impl ChannelGateParams {
    /// Seeded init: FC weights at 1/sqrt(fan_in), zero biases.
    pub fn random(rng: &mut Rng, channels: usize) -> Self {
        let d = reduced_dim(channels);
        let mat = |rows: usize, cols: usize, rng: &mut Rng| {
            let std = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gaussian(std)).collect();
            Tensor::new(vec![rows, cols], data).expect("seeded weights are finite")
        };
        ChannelGateParams {
            w_agg: mat(channels, d, rng),
            b_agg: Tensor::zeros(vec![d]).unwrap(),
            w_rgb: mat(d, channels, rng),
            b_rgb: Tensor::zeros(vec![channels]).unwrap(),
            w_th: mat(d, channels, rng),
            b_th: Tensor::zeros(vec![channels]).unwrap(),
        }
    }

    /// All-zero parameters (gates become exactly 0.5 everywhere).
    pub fn zeros(channels: usize) -> Self {
        let d = reduced_dim(channels);
        ChannelGateParams {
            w_agg: Tensor::zeros(vec![channels, d]).unwrap(),
            b_agg: Tensor::zeros(vec![d]).unwrap(),
            w_rgb: Tensor::zeros(vec![d, channels]).unwrap(),
            b_rgb: Tensor::zeros(vec![channels]).unwrap(),
            w_th: Tensor::zeros(vec![d, channels]).unwrap(),
            b_th: Tensor::zeros(vec![channels]).unwrap(),
        }
    }
}

/// Pools both modalities into the shared channel descriptor:
/// `d_g = F_agg(gap(f_rgb + f_th))`.
pub fn channel_aggregate(f_rgb: &Tensor, f_th: &Tensor, p: &ChannelGateParams) -> Result<Tensor, Error> {
    if f_rgb.shape() != f_th.shape() {
        return Err(Error::Data(format!(
            "modality maps differ: {:?} vs {:?}",
            f_rgb.shape(),
            f_th.shape()
        )));
    }
    let pooled = f_rgb.add(f_th)?.gap()?;
    Ok(pooled.linear(&p.w_agg, &p.b_agg)?)
}

/// Rescales one modality's channels by its sigmoid gate:
/// `f * sigmoid(F_mod(d_g))`, the gate broadcast over each spatial plane.
pub fn channel_distribute(
    f: &Tensor,
    d_g: &Tensor,
    p: &ChannelGateParams,
    modality: Modality,
) -> Result<Tensor, Error> {
    let (w, b) = match modality {
        Modality::Rgb => (&p.w_rgb, &p.b_rgb),
        Modality::Thermal => (&p.w_th, &p.b_th),
    };
    let gate = d_g.linear(w, b)?.sigmoid()?;
    Ok(f.scale_channels(gate.data())?)
}

/// Applies aggregation + distribution to both pairs of a quad: the template
/// pair with `p_template`, the search pair with `p_search` (parameters are
/// deliberately unshared between the two paths).
pub fn channel_gate_forward(
    quad: &FeatureQuad,
    p_template: &ChannelGateParams,
    p_search: &ChannelGateParams,
) -> Result<FeatureQuad, Error> {
    let dg_z = channel_aggregate(&quad.rgb_template, &quad.thermal_template, p_template)?;
    let dg_x = channel_aggregate(&quad.rgb_search, &quad.thermal_search, p_search)?;
    Ok(FeatureQuad {
        rgb_template: channel_distribute(&quad.rgb_template, &dg_z, p_template, Modality::Rgb)?,
        thermal_template: channel_distribute(&quad.thermal_template, &dg_z, p_template, Modality::Thermal)?,
        rgb_search: channel_distribute(&quad.rgb_search, &dg_x, p_search, Modality::Rgb)?,
        thermal_search: channel_distribute(&quad.thermal_search, &dg_x, p_search, Modality::Thermal)?,
    })
}

/// Per-modality 3x3 refinement convs for the similarity maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParams {
    pub conv_rgb: Tensor,
    pub bias_rgb: f64,
    pub conv_th: Tensor,
    pub bias_th: f64,
}

impl SimilarityParams {
    /// Seeded init: kernel weights at std 0.02, zero biases — small enough
    /// that untrained similarity maps stay near 0.5.
    pub fn random(rng: &mut Rng) -> Self {
        let kernel = |rng: &mut Rng| {
            let data = (0..9).map(|_| rng.gaussian(0.02)).collect();
            Tensor::new(vec![1, 1, 3, 3], data).expect("seeded weights are finite")
        };
        SimilarityParams {
            conv_rgb: kernel(rng),
            bias_rgb: 0.0,
            conv_th: kernel(rng),
            bias_th: 0.0,
        }
    }
}

/// Per-modality spatial reliability maps over the search region, values in
/// (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMaps {
    pub rgb: Tensor,
    pub thermal: Tensor,
}

/// Valid cross-correlation with the template as kernel, summed over all
/// channels: `[C,tz,tz] * [C,sx,sx] -> [1, sx-tz+1, sx-tz+1]`.
pub fn raw_correlation(template: &Tensor, search: &Tensor) -> Result<Tensor, Error> {
    if template.rank() != 3 || search.rank() != 3 {
        return Err(Error::Data("correlation expects [C,h,w] maps".into()));
    }
    if template.shape()[0] != search.shape()[0] {
        return Err(Error::Data("correlation maps must share channels".into()));
    }
    if template.shape()[1] > search.shape()[1] || template.shape()[2] > search.shape()[2] {
        return Err(Error::Data(format!(
            "template {:?} larger than search {:?}",
            &template.shape()[1..],
            &search.shape()[1..]
        )));
    }
    let (c, th, tw) = (template.shape()[0], template.shape()[1], template.shape()[2]);
    let kernel = template.reshape(vec![1, c, th, tw])?;
    Ok(search.conv2d(&kernel, 0, 1)?)
}

/// Full similarity map for one modality:
/// `sigmoid(conv3x3(upsample(template * search)))`, sized like the search map.
pub fn similarity_forward(
    template: &Tensor,
    search: &Tensor,
    p: &SimilarityParams,
    modality: Modality,
) -> Result<Tensor, Error> {
    let raw = raw_correlation(template, search)?;
    let up = raw.bilinear_upsample(search.shape()[1], search.shape()[2])?;
    let (kernel, bias) = match modality {
        Modality::Rgb => (&p.conv_rgb, p.bias_rgb),
        Modality::Thermal => (&p.conv_th, p.bias_th),
    };
    Ok(up.conv2d(kernel, 1, 1)?.add_channel_bias(&[bias])?.sigmoid()?)
}

/// Fuses a refined quad into the augmented template and search maps:
/// template is the plain modality sum; search applies each similarity map
/// as a residual gate before summing.
pub fn similarity_fuse(
    quad: &FeatureQuad,
    maps: &SimilarityMaps,
) -> Result<(Tensor, Tensor), Error> {
    if maps.rgb.shape()[1..] != quad.rgb_search.shape()[1..]
        || maps.thermal.shape()[1..] != quad.thermal_search.shape()[1..]
    {
        return Err(Error::Data(format!(
            "similarity maps {:?}/{:?} must match search size {:?}",
            maps.rgb.shape(),
            maps.thermal.shape(),
            quad.rgb_search.shape()
        )));
    }
    let fused_template = quad.rgb_template.add(&quad.thermal_template)?;
    let rgb_part = quad.rgb_search.mul(&maps.rgb)?.add(&quad.rgb_search)?;
    let th_part = quad.thermal_search.mul(&maps.thermal)?.add(&quad.thermal_search)?;
    let fused_search = rgb_part.add(&th_part)?;
    Ok((fused_template, fused_search))
}

/// Everything the modality-aware stage needs, drawn from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams {
    pub gate_template: ChannelGateParams,
    pub gate_search: ChannelGateParams,
    pub similarity: SimilarityParams,
}

impl ModalityParams {
    pub fn random(rng: &mut Rng, channels: usize) -> Self {
        ModalityParams {
            gate_template: ChannelGateParams::random(rng, channels),
            gate_search: ChannelGateParams::random(rng, channels),
            similarity: SimilarityParams::random(rng),
        }
    }
}

/// The whole stage: channel refinement, similarity maps, fusion.
/// Returns `(fused_template, fused_search, maps)`.
pub fn modality_forward(
    quad: &FeatureQuad,
    p: &ModalityParams,
) -> Result<(Tensor, Tensor, SimilarityMaps), Error> {
    let refined = channel_gate_forward(quad, &p.gate_template, &p.gate_search)?;
    let maps = SimilarityMaps {
        rgb: similarity_forward(&refined.rgb_template, &refined.rgb_search, &p.similarity, Modality::Rgb)?,
        thermal: similarity_forward(
            &refined.thermal_template,
            &refined.thermal_search,
            &p.similarity,
            Modality::Thermal,
        )?,
    };
    let (fz, fx) = similarity_fuse(&refined, &maps)?;
    Ok((fz, fx, maps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(rng: &mut Rng, c: usize, s: usize) -> Tensor {
        let data = (0..c * s * s).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor::new(vec![c, s, s], data).unwrap()
    }

    fn random_quad(rng: &mut Rng, c: usize, tz: usize, sx: usize) -> FeatureQuad {
        FeatureQuad::new(
            random_map(rng, c, tz),
            random_map(rng, c, tz),
            random_map(rng, c, sx),
            random_map(rng, c, sx),
        )
        .unwrap()
    }

    #[test]
    fn aggregate_zero_inputs_zero_bias_gives_zero() {
        let p = ChannelGateParams::zeros(8);
        let z = Tensor::zeros(vec![8, 4, 4]).unwrap();
        let d = channel_aggregate(&z, &z, &p).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_constant_maps_reduce_to_affine() {
        // constant maps pool to (c1 + c2) per channel, then one linear map
        let mut rng = Rng::new(3);
        let c = 8;
        let p = ChannelGateParams::random(&mut rng, c);
        let f1 = Tensor::filled(vec![c, 5, 5], 0.3).unwrap();
        let f2 = Tensor::filled(vec![c, 5, 5], -0.1).unwrap();
        let got = channel_aggregate(&f1, &f2, &p).unwrap();
        let pooled = Tensor::filled(vec![c], 0.2).unwrap();
        let want = pooled.linear(&p.w_agg, &p.b_agg).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_matches_straight_line_reference() {
        let mut rng = Rng::new(11);
        let c = 2;
        let p = ChannelGateParams::random(&mut rng, c);
        let f_rgb = random_map(&mut rng, c, 2);
        let f_th = random_map(&mut rng, c, 2);
        let got = channel_aggregate(&f_rgb, &f_th, &p).unwrap();
        // independent reference: plain loops, no tensor ops
        let d = reduced_dim(c);
        let mut pooled = vec![0.0; c];
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    acc += f_rgb.at(&[ch, i, j]) + f_th.at(&[ch, i, j]);
                }
            }
            pooled[ch] = acc / 4.0;
        }
        for k in 0..d {
            let mut acc = p.b_agg.data()[k];
            for ch in 0..c {
                acc += pooled[ch] * p.w_agg.at(&[ch, k]);
            }
            assert!((got.data()[k] - acc).abs() < 1e-12, "dim {k}");
        }
    }

    #[test]
    fn distribute_zero_params_halves_features() {
        let mut rng = Rng::new(5);
        let c = 8;
        let p = ChannelGateParams::zeros(c);
        let f = random_map(&mut rng, c, 4);
        let d = Tensor::zeros(vec![reduced_dim(c)]).unwrap();
        let out = channel_distribute(&f, &d, &p, Modality::Rgb).unwrap();
        for (o, i) in out.data().iter().zip(f.data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn distribute_zero_features_stay_zero() {
        let mut rng = Rng::new(6);
        let c = 8;
        let p = ChannelGateParams::random(&mut rng, c);
        let f = Tensor::zeros(vec![c, 4, 4]).unwrap();
        let d = Tensor::new(vec![reduced_dim(c)], (0..reduced_dim(c)).map(|i| i as f64).collect()).unwrap();
        let out = channel_distribute(&f, &d, &p, Modality::Thermal).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gates_live_strictly_inside_unit_interval() {
        let mut rng = Rng::new(7);
        let c = 16;
        for _ in 0..100 {
            let p = ChannelGateParams::random(&mut rng, c);
            let d = Tensor::new(
                vec![reduced_dim(c)],
                (0..reduced_dim(c)).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            )
            .unwrap();
            let gate = d.linear(&p.w_rgb, &p.b_rgb).unwrap().sigmoid().unwrap();
            assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
        }
    }

    #[test]
    fn channel_gates_keep_zero_quad_zero() {
        let mut rng = Rng::new(8);
        let c = 8;
        let p_z = ChannelGateParams::random(&mut rng, c);
        let p_x = ChannelGateParams::random(&mut rng, c);
        let zq = FeatureQuad::new(
            Tensor::zeros(vec![c, 4, 4]).unwrap(),
            Tensor::zeros(vec![c, 4, 4]).unwrap(),
            Tensor::zeros(vec![c, 8, 8]).unwrap(),
            Tensor::zeros(vec![c, 8, 8]).unwrap(),
        )
        .unwrap();
        let out = channel_gate_forward(&zq, &p_z, &p_x).unwrap();
        assert!(out.rgb_template.data().iter().all(|&v| v == 0.0));
        assert!(out.thermal_search.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn template_and_search_paths_are_genuinely_unshared() {
        let mut rng = Rng::new(9);
        let c = 8;
        let p_z = ChannelGateParams::random(&mut rng, c);
        let p_x = ChannelGateParams::random(&mut rng, c);
        let quad = random_quad(&mut rng, c, 4, 8);
        let normal = channel_gate_forward(&quad, &p_z, &p_x).unwrap();
        let swapped = channel_gate_forward(&quad, &p_x, &p_z).unwrap();
        assert_ne!(normal.rgb_template, swapped.rgb_template);
        assert_ne!(normal.rgb_search, swapped.rgb_search);
    }

    #[test]
    fn channel_gating_is_not_idempotent() {
        let mut rng = Rng::new(10);
        let c = 8;
        let p_z = ChannelGateParams::random(&mut rng, c);
        let p_x = ChannelGateParams::random(&mut rng, c);
        let quad = random_quad(&mut rng, c, 4, 8);
        let once = channel_gate_forward(&quad, &p_z, &p_x).unwrap();
        let twice = channel_gate_forward(&once, &p_z, &p_x).unwrap();
        assert_ne!(once.rgb_template, twice.rgb_template);
    }

    #[test]
    fn correlation_shape_and_template_size_check() {
        let mut rng = Rng::new(12);
        let t = random_map(&mut rng, 4, 16);
        let s = random_map(&mut rng, 4, 32);
        let raw = raw_correlation(&t, &s).unwrap();
        assert_eq!(raw.shape(), &[1, 17, 17]);
        assert!(raw_correlation(&s, &t).is_err());
    }

    #[test]
    fn planted_template_peaks_at_planting_offset() {
        let mut rng = Rng::new(13);
        for trial in 0..50 {
            let c = 2;
            let tz = 4;
            let sx = 12;
            let template = random_map(&mut rng, c, tz);
            // search = zeros with the template planted at a random offset
            let dy = rng.next_below((sx - tz + 1) as u64) as usize;
            let dx = rng.next_below((sx - tz + 1) as u64) as usize;
            let mut search_data = vec![0.0; c * sx * sx];
            for ch in 0..c {
                for u in 0..tz {
                    for v in 0..tz {
                        search_data[ch * sx * sx + (dy + u) * sx + (dx + v)] =
                            template.at(&[ch, u, v]);
                    }
                }
            }
            let search = Tensor::new(vec![c, sx, sx], search_data).unwrap();
            let raw = raw_correlation(&template, &search).unwrap();
            let side = sx - tz + 1;
            let mut best = (0usize, f64::NEG_INFINITY);
            for (i, &v) in raw.data().iter().enumerate() {
                if v > best.1 {
                    best = (i, v);
                }
            }
            assert_eq!(best.0, dy * side + dx, "trial {trial}");
        }
    }

    #[test]
    fn zero_template_similarity_is_sigmoid_of_bias() {
        let mut rng = Rng::new(14);
        let p = SimilarityParams {
            bias_rgb: 0.7,
            bias_th: -1.2,
            ..SimilarityParams::random(&mut rng)
        };
        let t = Tensor::zeros(vec![4, 4, 4]).unwrap();
        let s = random_map(&mut rng, 4, 8);
        let map = similarity_forward(&t, &s, &p, Modality::Rgb).unwrap();
        let want = 1.0 / (1.0 + (-0.7f64).exp());
        assert!(map.data().iter().all(|&v| (v - want).abs() < 1e-15));
        let map = similarity_forward(&t, &s, &p, Modality::Thermal).unwrap();
        let want = 1.0 / (1.0 + (1.2f64).exp());
        assert!(map.data().iter().all(|&v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn similarity_values_live_in_unit_interval() {
        let mut rng = Rng::new(15);
        let p = SimilarityParams::random(&mut rng);
        let t = random_map(&mut rng, 4, 4);
        let s = random_map(&mut rng, 4, 8);
        let map = similarity_forward(&t, &s, &p, Modality::Rgb).unwrap();
        assert_eq!(map.shape(), &[1, 8, 8]);
        assert!(map.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn fuse_with_zero_maps_is_residual_only() {
        let mut rng = Rng::new(16);
        let quad = random_quad(&mut rng, 4, 4, 8);
        let maps = SimilarityMaps {
            rgb: Tensor::zeros(vec![1, 8, 8]).unwrap(),
            thermal: Tensor::zeros(vec![1, 8, 8]).unwrap(),
        };
        let (fz, fx) = similarity_fuse(&quad, &maps).unwrap();
        let want_z = quad.rgb_template.add(&quad.thermal_template).unwrap();
        let want_x = quad.rgb_search.add(&quad.thermal_search).unwrap();
        for (a, b) in fz.data().iter().zip(want_z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fx.data().iter().zip(want_x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_with_unit_maps_doubles_the_sum() {
        let mut rng = Rng::new(17);
        let quad = random_quad(&mut rng, 4, 4, 8);
        let maps = SimilarityMaps {
            rgb: Tensor::filled(vec![1, 8, 8], 1.0).unwrap(),
            thermal: Tensor::filled(vec![1, 8, 8], 1.0).unwrap(),
        };
        let (_fz, fx) = similarity_fuse(&quad, &maps).unwrap();
        let sum = quad.rgb_search.add(&quad.thermal_search).unwrap();
        for (a, b) in fx.data().iter().zip(sum.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_matches_straight_line_reference() {
        let mut rng = Rng::new(18);
        let quad = random_quad(&mut rng, 3, 4, 6);
        let s_rgb = random_map(&mut rng, 1, 6).sigmoid().unwrap();
        let s_th = random_map(&mut rng, 1, 6).sigmoid().unwrap();
        let maps = SimilarityMaps { rgb: s_rgb.clone(), thermal: s_th.clone() };
        let (fz, fx) = similarity_fuse(&quad, &maps).unwrap();
        for ch in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    let want = quad.rgb_template.at(&[ch, i, j]) + quad.thermal_template.at(&[ch, i, j]);
                    assert!((fz.at(&[ch, i, j]) - want).abs() < 1e-12);
                }
            }
            for i in 0..6 {
                for j in 0..6 {
                    let r = quad.rgb_search.at(&[ch, i, j]);
                    let t = quad.thermal_search.at(&[ch, i, j]);
                    let want = (r * s_rgb.at(&[0, i, j]) + r) + (t * s_th.at(&[0, i, j]) + t);
                    assert!((fx.at(&[ch, i, j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fused_search_bounded_for_nonnegative_features() {
        // with non-negative refined maps, the residual gating keeps the
        // fused map between 1x and 2x the plain modality sum
        let mut rng = Rng::new(19);
        for _ in 0..20 {
            let quad = FeatureQuad::new(
                random_map(&mut rng, 3, 4).relu().unwrap(),
                random_map(&mut rng, 3, 4).relu().unwrap(),
                random_map(&mut rng, 3, 6).relu().unwrap(),
                random_map(&mut rng, 3, 6).relu().unwrap(),
            )
            .unwrap();
            let maps = SimilarityMaps {
                rgb: random_map(&mut rng, 1, 6).sigmoid().unwrap(),
                thermal: random_map(&mut rng, 1, 6).sigmoid().unwrap(),
            };
            let (_fz, fx) = similarity_fuse(&quad, &maps).unwrap();
            let sum = quad.rgb_search.add(&quad.thermal_search).unwrap();
            for (f, s) in fx.data().iter().zip(sum.data()) {
                assert!(*f >= *s - 1e-12);
                assert!(*f <= 2.0 * *s + 1e-12);
            }
        }
    }

    #[test]
    fn swapping_modalities_everywhere_gives_identical_outputs() {
        let mut rng = Rng::new(20);
        let c = 8;
        let p = ModalityParams::random(&mut rng, c);
        let quad = random_quad(&mut rng, c, 4, 8);
        let (fz, fx, _) = modality_forward(&quad, &p).unwrap();
        // swap the modalities in both the data and the parameters
        let swapped_quad = FeatureQuad::new(
            quad.thermal_template.clone(),
            quad.rgb_template.clone(),
            quad.thermal_search.clone(),
            quad.rgb_search.clone(),
        )
        .unwrap();
        let swap_gates = |p: &ChannelGateParams| ChannelGateParams {
            w_agg: p.w_agg.clone(),
            b_agg: p.b_agg.clone(),
            w_rgb: p.w_th.clone(),
            b_rgb: p.b_th.clone(),
            w_th: p.w_rgb.clone(),
            b_th: p.b_rgb.clone(),
        };
        let swapped_params = ModalityParams {
            gate_template: swap_gates(&p.gate_template),
            gate_search: swap_gates(&p.gate_search),
            similarity: SimilarityParams {
                conv_rgb: p.similarity.conv_th.clone(),
                bias_rgb: p.similarity.bias_th,
                conv_th: p.similarity.conv_rgb.clone(),
                bias_th: p.similarity.bias_rgb,
            },
        };
        let (fz2, fx2, _) = modality_forward(&swapped_quad, &swapped_params).unwrap();
        assert_eq!(fz, fz2);
        assert_eq!(fx, fx2);
    }

    #[test]
    fn forward_output_shapes() {
        let mut rng = Rng::new(21);
        let c = 8;
        let p = ModalityParams::random(&mut rng, c);
        let quad = random_quad(&mut rng, c, 16, 32);
        let (fz, fx, maps) = modality_forward(&quad, &p).unwrap();
        assert_eq!(fz.shape(), &[c, 16, 16]);
        assert_eq!(fx.shape(), &[c, 32, 32]);
        assert_eq!(maps.rgb.shape(), &[1, 32, 32]);
        assert_eq!(maps.thermal.shape(), &[1, 32, 32]);
    }
}
