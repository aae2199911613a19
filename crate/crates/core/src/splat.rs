//! The splat representation and the pointwise Gaussian math.
//!
//! A [`GaussianSplat`] carries a world-space mean, a unit rotation quaternion
//! in `(w, x, y, z)` order with the Hamilton product, per-axis scales, an
//! opacity, an RGB color and a semantic label. Splats bound to a mesh also
//! carry a [`MeshBinding`] holding their triangle-local parameters.
//!
//! The covariance of a splat is `R · diag(s)² · Rᵀ`, and the unnormalized
//! density at `x` is `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::MeshBinding;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

/// Semantic label id. `0` means unlabeled.
pub type Label = u16;

/// Tolerance on `‖q‖ - 1` accepted by [`covariance_from_params`].
pub const UNIT_QUAT_TOLERANCE: f64 = 1e-6;

/// Condition-number ceiling for [`gaussian_eval`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    pub mu: Vec3,
    pub rotation: Quat,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub label: Label,
    pub binding: Option<MeshBinding>,
    /// Decoupled splats keep their binding record but are not posed by the
    /// mesh; their world parameters are optimized directly.
    pub decoupled: bool,
}

impl GaussianSplat {
    /// An unbound splat with identity rotation.
    pub fn new(mu: Vec3, scale: Vec3, opacity: f64, color: Vec3) -> Self {
        Self {
            mu,
            rotation: Quat::identity(),
            scale,
            opacity,
            color,
            label: 0,
            binding: None,
            decoupled: false,
        }
    }

    pub fn with_rotation(mut self, rotation: Quat) -> Self {
        self.rotation = rotation.normalize();
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    /// True when the mesh drives this splat's world parameters.
    pub fn is_rigged(&self) -> bool {
        self.binding.is_some() && !self.decoupled
    }

    pub fn covariance(&self) -> Result<Covariance3> {
        covariance_from_params(&self.rotation, &self.scale)
    }

    /// Checks the per-splat invariants.
    pub fn validate(&self) -> Result<()> {
        let norm = self.rotation.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation quaternion norm {norm} is not unit"
            )));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale {:?} must be strictly positive",
                self.scale.as_slice()
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidParameter(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvalidParameter(format!(
                "color {:?} outside [0, 1]",
                self.color.as_slice()
            )));
        }
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite position".into()));
        }
        if let Some(binding) = &self.binding {
            binding.validate()?;
        }
        Ok(())
    }
}

/// Symmetric positive-definite 3×3 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Mat3);

impl Covariance3 {
    /// Wraps a matrix after checking symmetry and positive definiteness.
    pub fn new(sigma: Mat3) -> Result<Self> {
        if (sigma - sigma.transpose()).abs().max() > 1e-12 * sigma.abs().max().max(1.0) {
            return Err(Error::InvalidParameter(
                "covariance is not symmetric".into(),
            ));
        }
        if sigma.cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(Self(sigma))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to `dL/dq` for the (unit) quaternion used to build `R`
/// with [`rotation_matrix`]. Returned in `(w, x, y, z)` order.
pub fn rotation_matrix_vjp(q: &Quat, grad_r: &Mat3) -> [f64; 4] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let g = grad_r;
    let dot = |m: Mat3| 2.0 * g.component_mul(&m).sum();
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0);
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x);
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y);
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0);
    [dot(dw), dot(dx), dot(dy), dot(dz)]
}

/// Pulls a gradient on `q / ‖q‖` back to the unnormalized quaternion.
pub fn normalize_vjp(raw: &[f64; 4], grad_unit: &[f64; 4]) -> [f64; 4] {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = raw.map(|v| v / norm);
    let along: f64 = unit.iter().zip(grad_unit).map(|(u, g)| u * g).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (grad_unit[k] - unit[k] * along) / norm;
    }
    out
}

/// Unit quaternion of a proper rotation matrix.
pub fn quat_from_matrix(r: &Mat3) -> Quat {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    UnitQuaternion::from_rotation_matrix(&rot).into_inner()
}

pub(crate) fn quat_to_array(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub(crate) fn quat_from_array(a: [f64; 4]) -> Quat {
    Quat::new(a[0], a[1], a[2], a[3])
}

/// `R · diag(s) · diag(s) · Rᵀ`.
pub fn covariance_from_params(q: &Quat, s: &Vec3) -> Result<Covariance3> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_QUAT_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "quaternion norm {norm} is not unit"
        )));
    }
    if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale {:?} must be strictly positive",
            s.as_slice()
        )));
    }
    let r = rotation_matrix(&q.normalize());
    let s2 = Mat3::from_diagonal(&s.component_mul(s));
    let sigma = r * s2 * r.transpose();
    // Symmetrize away rounding so the stored matrix is exactly symmetric.
    Ok(Covariance3((sigma + sigma.transpose()) * 0.5))
}

/// `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_eval(mu: &Vec3, sigma: &Covariance3, x: &Vec3) -> Result<f64> {
    let eig = sigma.0.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::DegenerateCovariance { condition });
    }
    let chol = sigma
        .0
        .cholesky()
        .ok_or(Error::DegenerateCovariance { condition })?;
    let d = x - mu;
    let solved = chol.solve(&d);
    Ok((-0.5 * d.dot(&solved)).exp())
}

/// Optimizable scalars per splat: position 3, quaternion 4, log-scale 3,
/// opacity logit 1, color 3.
pub const PARAMS_PER_SPLAT: usize = 14;

/// Names of the per-splat parameter slots, in packing order.
pub const PARAM_LAYOUT: [&str; PARAMS_PER_SPLAT] = [
    "pos.x",
    "pos.y",
    "pos.z",
    "rot.w",
    "rot.x",
    "rot.y",
    "rot.z",
    "log_scale.x",
    "log_scale.y",
    "log_scale.z",
    "opacity_logit",
    "color.r",
    "color.g",
    "color.b",
];

/// Parameter classes, used by gradient checks and per-class reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamClass {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Position,
        ParamClass::Rotation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::Color,
    ];

    pub fn of_slot(slot: usize) -> ParamClass {
        match slot {
            0..=2 => ParamClass::Position,
            3..=6 => ParamClass::Rotation,
            7..=9 => ParamClass::Scale,
            10 => ParamClass::Opacity,
            _ => ParamClass::Color,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::Position => "position",
            ParamClass::Rotation => "rotation",
            ParamClass::Scale => "scale",
            ParamClass::Opacity => "opacity",
            ParamClass::Color => "color",
        }
    }
}

pub(crate) const SLOT_POS: usize = 0;
pub(crate) const SLOT_ROT: usize = 3;
pub(crate) const SLOT_SCALE: usize = 7;
pub(crate) const SLOT_OPACITY: usize = 10;
pub(crate) const SLOT_COLOR: usize = 11;

/// Opacities are squeezed into `[OPACITY_EPS, 1 - OPACITY_EPS]` before the
/// logit so saturated splats stay finite.
pub const OPACITY_EPS: f64 = 1e-9;

/// Flat optimizer-space view of a scene.
///
/// Rigged splats contribute their triangle-local offset, rotation and scale;
/// free splats contribute world values. Scales are stored as logarithms and
/// opacity as a logit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(splats: usize) -> Self {
        Self {
            values: vec![0.0; splats * PARAMS_PER_SPLAT],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn splat_count(&self) -> usize {
        self.values.len() / PARAMS_PER_SPLAT
    }

    pub fn splat(&self, index: usize) -> &[f64] {
        &self.values[index * PARAMS_PER_SPLAT..(index + 1) * PARAMS_PER_SPLAT]
    }

    pub fn splat_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * PARAMS_PER_SPLAT..(index + 1) * PARAMS_PER_SPLAT]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Packs the optimizable scalars of `scene`.
pub fn pack_params(scene: &[GaussianSplat]) -> ParamVector {
    let mut out = ParamVector::zeros(scene.len());
    for (i, splat) in scene.iter().enumerate() {
        let slot = out.splat_mut(i);
        let (pos, rot, scale) = match (&splat.binding, splat.decoupled) {
            (Some(b), false) => (b.offset, b.local_rotation, b.local_scale),
            _ => (splat.mu, splat.rotation, splat.scale),
        };
        slot[SLOT_POS..SLOT_POS + 3].copy_from_slice(pos.as_slice());
        slot[SLOT_ROT..SLOT_ROT + 4].copy_from_slice(&quat_to_array(&rot));
        for k in 0..3 {
            slot[SLOT_SCALE + k] = scale[k].ln();
        }
        slot[SLOT_OPACITY] = logit(splat.opacity);
        slot[SLOT_COLOR..SLOT_COLOR + 3].copy_from_slice(splat.color.as_slice());
    }
    out
}

/// Result of [`unpack_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub scene: Vec<GaussianSplat>,
    /// True when some color channel had to be clamped into `[0, 1]`.
    pub clamped: bool,
}

/// Writes `v` back onto a copy of `template`.
///
/// Labels, triangle ids, barycentrics and flags come from the template. For
/// rigged splats the world fields keep their template values until the scene
/// is posed again. Quaternions are renormalized and colors clamped.
///
/// A parameter group equal to the template's own packed value keeps the
/// template field bit for bit, so `unpack(pack(s), s) == s` exactly. The
/// ln/exp and logit/sigmoid round trips are otherwise off by an ulp, which
/// is enough to turn a zero-loss start into a nonzero Adam step.
pub fn unpack_params(v: &ParamVector, template: &[GaussianSplat]) -> Result<Unpacked> {
    let expected = template.len() * PARAMS_PER_SPLAT;
    if v.len() != expected {
        return Err(Error::Layout {
            expected,
            actual: v.len(),
        });
    }
    let mut clamped = false;
    let mut scene = template.to_vec();
    let packed = pack_params(template);
    for (i, splat) in scene.iter_mut().enumerate() {
        let slot = v.splat(i);
        let same = packed.splat(i);
        let unchanged = |r: std::ops::Range<usize>| slot[r.clone()] == same[r];
        let pos = Vec3::new(slot[0], slot[1], slot[2]);
        let raw_q = quat_from_array([slot[3], slot[4], slot[5], slot[6]]);
        let q_norm = raw_q.norm();
        if !(q_norm > 0.0 && q_norm.is_finite()) {
            return Err(Error::NonFinite {
                splat: i,
                what: "rotation quaternion".into(),
            });
        }
        let (tpl_rot, tpl_scale) = match (&splat.binding, splat.decoupled) {
            (Some(b), false) => (b.local_rotation, b.local_scale),
            _ => (splat.rotation, splat.scale),
        };
        let rot = if unchanged(SLOT_ROT..SLOT_ROT + 4) {
            tpl_rot
        } else {
            raw_q / q_norm
        };
        let scale = if unchanged(SLOT_SCALE..SLOT_SCALE + 3) {
            tpl_scale
        } else {
            Vec3::new(slot[7].exp(), slot[8].exp(), slot[9].exp())
        };
        if !unchanged(SLOT_OPACITY..SLOT_OPACITY + 1) {
            splat.opacity = sigmoid(slot[SLOT_OPACITY]);
        }
        let mut color = Vec3::new(slot[11], slot[12], slot[13]);
        for c in color.iter_mut() {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    splat: i,
                    what: "color".into(),
                });
            }
            if *c < 0.0 || *c > 1.0 {
                clamped = true;
                *c = c.clamp(0.0, 1.0);
            }
        }
        splat.color = color;
        match (&mut splat.binding, splat.decoupled) {
            (Some(b), false) => {
                b.offset = pos;
                b.local_rotation = rot;
                b.local_scale = scale;
            }
            _ => {
                splat.mu = pos;
                splat.rotation = rot;
                splat.scale = scale;
            }
        }
    }
    Ok(Unpacked { scene, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn z90() -> Quat {
        let h = std::f64::consts::FRAC_PI_4;
        Quat::new(h.cos(), 0.0, 0.0, h.sin())
    }

    #[test]
    fn unpack_of_own_pack_is_bit_exact() {
        let mut s = GaussianSplat::new(
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(0.07, 0.3, 0.011),
            0.37,
            Vec3::new(0.2, 0.9, 0.55),
        );
        s.rotation = Quat::new(0.3, -0.5, 0.7, 0.2).normalize();
        let scene = vec![s];
        let mut v = pack_params(&scene);
        assert_eq!(unpack_params(&v, &scene).unwrap().scene, scene);
        // A touched group is recomputed; the rest stay bit-exact.
        v.values[SLOT_SCALE] += 0.5;
        let out = unpack_params(&v, &scene).unwrap().scene.remove(0);
        assert_eq!(out.scale[1], scene[0].scale[1]);
        assert_relative_eq!(out.scale[0], 0.07 * 0.5f64.exp(), epsilon = 1e-15);
        assert_eq!(
            (out.opacity, out.rotation),
            (scene[0].opacity, scene[0].rotation)
        );
    }

    #[test]
    fn identity_rotation_unit_scale_is_identity() {
        let c = covariance_from_params(&Quat::identity(), &Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(*c.matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn axis_scale_squares_on_diagonal() {
        let c = covariance_from_params(&Quat::identity(), &Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(
            *c.matrix(),
            Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        // Independent route: explicit matrix product with a hand-written Rz(90°).
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        let expected = rz * s * s.transpose() * rz.transpose();
        assert_relative_eq!(expected, Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0)));
        let c = covariance_from_params(&z90(), &Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(*c.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_quaternion_and_scale() {
        let q = Quat::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(
            covariance_from_params(&q, &Vec3::new(1.0, 1.0, 1.0)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            covariance_from_params(&Quat::identity(), &Vec3::new(1.0, 0.0, 1.0)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn gaussian_eval_examples() {
        let mu = Vec3::new(0.3, -1.0, 2.0);
        let id = Covariance3::new(Mat3::identity()).unwrap();
        assert_eq!(gaussian_eval(&mu, &id, &mu).unwrap(), 1.0);
        let x = mu + Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(gaussian_eval(&mu, &id, &x).unwrap(), (-0.5f64).exp());
        assert_relative_eq!(
            gaussian_eval(&mu, &id, &x).unwrap(),
            0.60653,
            epsilon = 1e-5
        );
        // Scaling symmetry: doubling the axis and the offset leaves the value fixed.
        let wide = Covariance3::new(Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).unwrap();
        let x2 = mu + Vec3::new(2.0, 0.0, 0.0);
        let inv = wide.matrix().try_inverse().unwrap();
        let d = x2 - mu;
        let oracle = (-0.5 * (d.transpose() * inv * d)[0]).exp();
        assert_relative_eq!(
            gaussian_eval(&mu, &wide, &x2).unwrap(),
            oracle,
            epsilon = 1e-15
        );
        assert_relative_eq!(oracle, (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn gaussian_eval_rejects_near_singular() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 1e-13));
        let c = Covariance3(m);
        assert!(matches!(
            gaussian_eval(&Vec3::zeros(), &c, &Vec3::zeros()),
            Err(Error::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn pack_sizes() {
        assert!(pack_params(&[]).is_empty());
        let s = GaussianSplat::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.5, Vec3::zeros());
        assert_eq!(pack_params(&[s]).len(), 14);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let s = GaussianSplat::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.5, Vec3::zeros());
        let v = ParamVector {
            values: vec![0.0; 13],
        };
        assert!(matches!(
            unpack_params(&v, &[s]),
            Err(Error::Layout {
                expected: 14,
                actual: 13
            })
        ));
    }

    #[test]
    fn unpack_clamps_and_normalizes() {
        let s = GaussianSplat::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.5, Vec3::zeros());
        let mut v = pack_params(&[s.clone()]);
        v.values[3] = 2.0;
        v.values[11] = 1.5;
        let out = unpack_params(&v, &[s]).unwrap();
        assert!(out.clamped);
        assert_eq!(out.scene[0].color.x, 1.0);
        assert_relative_eq!(out.scene[0].rotation.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_vjp_matches_finite_differences() {
        let q = Quat::new(0.7, -0.2, 0.4, 0.3).normalize();
        let g = Mat3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7, 0.9, 0.4, -0.3);
        let analytic = rotation_matrix_vjp(&q, &g);
        let base = quat_to_array(&q);
        for k in 0..4 {
            let h = 1e-6;
            let mut plus = base;
            let mut minus = base;
            plus[k] += h;
            minus[k] -= h;
            let f = |a: [f64; 4]| g.component_mul(&rotation_matrix(&quat_from_array(a))).sum();
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            assert_relative_eq!(analytic[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn quat_matrix_round_trip() {
        let q = Quat::new(0.7, -0.2, 0.4, 0.3).normalize();
        let back = quat_from_matrix(&rotation_matrix(&q));
        let same = (back - q).norm() < 1e-12 || (back + q).norm() < 1e-12;
        assert!(same);
    }
}
