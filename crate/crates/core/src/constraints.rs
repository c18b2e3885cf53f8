//! Rigid-bond (dumbbell) holonomic constraints.
//!
//! Dumbbell `k` ties particles `first` and `second` at rest length `ℓ₀` via the
//! scalar constraint `g(q) = |Δ|² − ℓ₀²`, where `Δ` is the minimum-image
//! separation `q_first − q_second`. Gradients are laid out as a set-local block:
//! the `dim` components of `first` followed by those of `second`.

use thiserror::Error;

use crate::model::{wrap_coord, Partition, PhaseState, RngStream, SystemSpec};
use crate::potential::min_image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("rest length {rest_length} must lie in (0, {max})")]
    BadRestLength { rest_length: f64, max: f64 },
    #[error("particle {0} appears in more than one constraint")]
    ParticleReused(usize),
    #[error("particle index {0} out of range")]
    OutOfRange(usize),
    #[error("dumbbell {0} has coincident particles; its bond direction is undefined")]
    Degenerate(usize),
    #[error("constraint {index} violated on entry: g = {value:e}, tangency = {tangency:e}")]
    Violated { index: usize, value: f64, tangency: f64 },
    #[error("partition set {0} does not match its dumbbell")]
    PartitionMismatch(usize),
    #[error("could not place dumbbells without overlap after {0} attempts")]
    Placement(usize),
}

/// Largest block length any dumbbell gradient can have (two particles in 3D).
pub const MAX_BLOCK: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct DumbbellConstraint {
    first: usize,
    second: usize,
    rest_length: f64,
    box_length: f64,
    dim: usize,
}

impl DumbbellConstraint {
    pub fn new(
        first: usize,
        second: usize,
        rest_length: f64,
        box_length: f64,
        dim: usize,
    ) -> Result<Self, ConstraintError> {
        let max = 0.5 * box_length;
        if !(rest_length > 0.0 && rest_length < max) {
            return Err(ConstraintError::BadRestLength { rest_length, max });
        }
        if first == second {
            return Err(ConstraintError::ParticleReused(first));
        }
        Ok(Self {
            first,
            second,
            rest_length,
            box_length,
            dim,
        })
    }

    pub fn particles(&self) -> [usize; 2] {
        [self.first, self.second]
    }

    pub fn rest_length(&self) -> f64 {
        self.rest_length
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Minimum-image `q_first − q_second` from a set-local block laid out as
    /// `[q_first..., q_second...]`. The block need not be wrapped.
    pub fn block_separation(&self, block: &[f64]) -> [f64; 3] {
        let d = self.dim;
        let mut s = [0.0; 3];
        for a in 0..d {
            s[a] = min_image_any(block[a] - block[d + a], self.box_length);
        }
        s
    }

    pub fn separation(&self, q: &[f64]) -> [f64; 3] {
        let d = self.dim;
        let mut s = [0.0; 3];
        for (a, sa) in s.iter_mut().enumerate().take(d) {
            *sa = min_image(q[self.first * d + a] - q[self.second * d + a], self.box_length);
        }
        s
    }

    fn value_of(&self, s: &[f64; 3]) -> f64 {
        s[..self.dim].iter().map(|x| x * x).sum::<f64>() - self.rest_length * self.rest_length
    }

    fn gradient_of(&self, s: &[f64; 3]) -> [f64; MAX_BLOCK] {
        let d = self.dim;
        let mut g = [0.0; MAX_BLOCK];
        for a in 0..d {
            g[a] = 2.0 * s[a];
            g[d + a] = -2.0 * s[a];
        }
        g
    }

    /// `g(q) = |Δ|² − ℓ₀²`.
    pub fn value(&self, q: &[f64]) -> f64 {
        self.value_of(&self.separation(q))
    }

    pub fn block_value(&self, block: &[f64]) -> f64 {
        self.value_of(&self.block_separation(block))
    }

    /// Set-local gradient block `(2Δ, −2Δ)`; zero for coincident particles.
    pub fn gradient(&self, q: &[f64]) -> [f64; MAX_BLOCK] {
        self.gradient_of(&self.separation(q))
    }

    pub fn block_gradient(&self, block: &[f64]) -> [f64; MAX_BLOCK] {
        self.gradient_of(&self.block_separation(block))
    }

    /// Set-local inverse masses matching the gradient layout.
    pub fn inverse_masses(&self, spec: &SystemSpec) -> [f64; MAX_BLOCK] {
        let d = self.dim;
        let mut w = [0.0; MAX_BLOCK];
        for a in 0..d {
            w[a] = 1.0 / spec.mass(self.first);
            w[d + a] = 1.0 / spec.mass(self.second);
        }
        w
    }

    /// `∇gᵀ M⁻¹ p` for the dumbbell's momenta.
    pub fn tangency(&self, q: &[f64], p: &[f64], spec: &SystemSpec) -> f64 {
        let d = self.dim;
        let g = self.gradient(q);
        let w = self.inverse_masses(spec);
        let mut acc = 0.0;
        for a in 0..d {
            acc += g[a] * w[a] * p[self.first * d + a];
            acc += g[d + a] * w[d + a] * p[self.second * d + a];
        }
        acc
    }
}

fn min_image_any(dx: f64, l: f64) -> f64 {
    dx - l * (dx / l).round()
}

/// `p ← p − G (Gᵀ M⁻¹ p) / (Gᵀ M⁻¹ G)`: removes the component of a set-local
/// momentum block that is not tangent to the constraint surface.
pub fn project_tangent(grad: &[f64], inv_mass: &[f64], p: &mut [f64]) {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((g, w), x) in grad.iter().zip(inv_mass).zip(p.iter()) {
        num += g * w * x;
        den += g * w * g;
    }
    if den > 0.0 {
        let c = num / den;
        for (x, g) in p.iter_mut().zip(grad) {
            *x -= c * g;
        }
    }
}

/// One dumbbell constraint per partition set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<DumbbellConstraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<DumbbellConstraint>, n_particles: usize) -> Result<Self, ConstraintError> {
        let mut used = vec![false; n_particles];
        for c in &constraints {
            for i in c.particles() {
                if i >= n_particles {
                    return Err(ConstraintError::OutOfRange(i));
                }
                if std::mem::replace(&mut used[i], true) {
                    return Err(ConstraintError::ParticleReused(i));
                }
            }
        }
        Ok(Self { constraints })
    }

    /// Dumbbells `(2k, 2k + 1)` for `k < n_dumbbells`, matching
    /// [`Partition::per_dumbbell`].
    pub fn dumbbells(
        n_dumbbells: usize,
        rest_length: f64,
        box_length: f64,
        dim: usize,
    ) -> Result<Self, ConstraintError> {
        let list = (0..n_dumbbells)
            .map(|k| DumbbellConstraint::new(2 * k, 2 * k + 1, rest_length, box_length, dim))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(list, 2 * n_dumbbells)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn get(&self, set: usize) -> &DumbbellConstraint {
        &self.constraints[set]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DumbbellConstraint> {
        self.constraints.iter()
    }

    /// Set `j` of the partition must be exactly the two particles of
    /// constraint `j`, in order.
    pub fn check_partition(&self, partition: &Partition) -> Result<(), ConstraintError> {
        if partition.len() != self.constraints.len() {
            return Err(ConstraintError::PartitionMismatch(partition.len().min(self.len())));
        }
        for (j, c) in self.constraints.iter().enumerate() {
            if partition.set(j) != c.particles() {
                return Err(ConstraintError::PartitionMismatch(j));
            }
        }
        Ok(())
    }

    pub fn values(&self, q: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(q)).collect()
    }

    pub fn max_violation(&self, q: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.value(q).abs()).fold(0.0, f64::max)
    }

    pub fn max_tangency(&self, q: &[f64], p: &[f64], spec: &SystemSpec) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.tangency(q, p, spec).abs())
            .fold(0.0, f64::max)
    }
}

/// Moves each dumbbell onto its bond length by rescaling symmetrically about
/// the bond midpoint, then projects the momenta onto the tangent space at the
/// corrected positions.
pub fn project_to_manifold(
    q_raw: &[f64],
    p_raw: &[f64],
    constraints: &ConstraintSet,
    spec: &SystemSpec,
) -> Result<(Vec<f64>, Vec<f64>), ConstraintError> {
    let d = spec.dim();
    let l = spec.box_length();
    let mut q = q_raw.to_vec();
    let mut p = p_raw.to_vec();
    for (k, c) in constraints.iter().enumerate() {
        let [a, b] = c.particles();
        let s = c.separation(&q);
        let len = s[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            return Err(ConstraintError::Degenerate(k));
        }
        let scale = c.rest_length() / len;
        if (scale - 1.0).abs() > 0.0 {
            for x in 0..d {
                let mid = q[b * d + x] + 0.5 * s[x];
                let half = 0.5 * s[x] * scale;
                q[a * d + x] = wrap_coord(mid + half, l);
                q[b * d + x] = wrap_coord(mid - half, l);
            }
        }
        let g = c.gradient(&q);
        let w = c.inverse_masses(spec);
        let mut block = [0.0; MAX_BLOCK];
        block[..d].copy_from_slice(&p[a * d..(a + 1) * d]);
        block[d..2 * d].copy_from_slice(&p[b * d..(b + 1) * d]);
        project_tangent(&g[..2 * d], &w[..2 * d], &mut block[..2 * d]);
        p[a * d..(a + 1) * d].copy_from_slice(&block[..d]);
        p[b * d..(b + 1) * d].copy_from_slice(&block[d..2 * d]);
    }
    Ok((q, p))
}

/// Checks that a state lies on the cotangent manifold within `tol`.
pub fn check_on_manifold(
    state: &PhaseState,
    constraints: &ConstraintSet,
    spec: &SystemSpec,
    tol: f64,
) -> Result<(), ConstraintError> {
    for (index, c) in constraints.iter().enumerate() {
        let value = c.value(&state.q);
        let tangency = c.tangency(&state.q, &state.p, spec);
        if value.abs() > tol || tangency.abs() > tol {
            return Err(ConstraintError::Violated {
                index,
                value,
                tangency,
            });
        }
    }
    Ok(())
}

/// Dumbbell positions with no two atoms closer than `min_distance`. Returns
/// positions for particles `0..2n`.
///
/// Centres go on a square/cubic grid and each bond gets a random orientation,
/// re-drawn until it fits. Dense systems where that keeps failing fall back to
/// bonds aligned with the first axis on a rectangular lattice.
pub fn place_dumbbells(
    n_dumbbells: usize,
    rest_length: f64,
    spec: &SystemSpec,
    min_distance: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>, ConstraintError> {
    const MAX_TRIES: usize = 200;
    const MAX_RESTARTS: usize = 50;
    let d = spec.dim();
    let l = spec.box_length();
    let mut k = 1usize;
    while k.pow(d as u32) < n_dumbbells {
        k += 1;
    }
    let spacing = l / k as f64;
    let mut q = vec![0.0; 2 * n_dumbbells * d];
    'restart: for _ in 0..MAX_RESTARTS {
        for m in 0..n_dumbbells {
            let mut centre = [0.0; 3];
            let mut rest = m;
            for a in (0..d).rev() {
                centre[a] = (rest % k) as f64 * spacing + 0.5 * spacing;
                rest /= k;
            }
            let mut placed = false;
            for _ in 0..MAX_TRIES {
                let mut u = [0.0; 3];
                for x in u.iter_mut().take(d) {
                    *x = rng.gaussian();
                }
                let norm = u[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let h = 0.5 * rest_length * u[a] / norm;
                    q[2 * m * d + a] = wrap_coord(centre[a] + h, l);
                    q[(2 * m + 1) * d + a] = wrap_coord(centre[a] - h, l);
                }
                let clear = (0..2 * m).all(|j| {
                    [2 * m, 2 * m + 1].iter().all(|&i| {
                        crate::potential::minimum_image_distance(
                            &q[i * d..(i + 1) * d],
                            &q[j * d..(j + 1) * d],
                            l,
                        ) >= min_distance
                    })
                });
                if clear {
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return Ok(q);
    }
    aligned_dumbbells(n_dumbbells, rest_length, spec, min_distance).ok_or(ConstraintError::Placement(MAX_RESTARTS))
}

fn aligned_dumbbells(n_dumbbells: usize, rest_length: f64, spec: &SystemSpec, min_distance: f64) -> Option<Vec<f64>> {
    let d = spec.dim();
    let l = spec.box_length();
    let cols = (l / (rest_length + min_distance)).floor() as usize;
    if cols == 0 {
        return None;
    }
    // slots across the remaining axes, as few as will hold every dumbbell
    let needed = n_dumbbells.div_ceil(cols);
    let mut rows = 1usize;
    while rows.pow(d as u32 - 1) < needed {
        rows += 1;
    }
    if d == 1 && needed > 1 {
        return None;
    }
    let row_spacing = l / rows as f64;
    if d > 1 && row_spacing < min_distance {
        return None;
    }
    let col_spacing = l / cols as f64;
    let mut q = vec![0.0; 2 * n_dumbbells * d];
    for m in 0..n_dumbbells {
        let (col, mut slot) = (m % cols, m / cols);
        let base = 2 * m * d;
        let centre = (col as f64 + 0.5) * col_spacing;
        q[base] = wrap_coord(centre + 0.5 * rest_length, l);
        q[base + d] = wrap_coord(centre - 0.5 * rest_length, l);
        for a in 1..d {
            let x = (slot % rows) as f64 * row_spacing + 0.5 * row_spacing;
            slot /= rows;
            q[base + a] = x;
            q[base + d + a] = x;
        }
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamPurpose;

    fn spec(n: usize, d: usize, l: f64) -> SystemSpec {
        SystemSpec::uniform(n, d, l, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn value_examples() {
        let c = DumbbellConstraint::new(0, 1, 1.0, 5.0, 2).unwrap();
        assert_eq!(c.value(&[1.0, 1.0, 2.0, 1.0]), 0.0);
        assert_eq!(c.value(&[1.0, 1.0, 1.0, 1.0]), -1.0);
        // bond straddling the periodic boundary
        assert!(c.value(&[4.6, 2.0, 0.6, 2.0]).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let c = DumbbellConstraint::new(0, 1, 1.0, 5.0, 2).unwrap();
        let g = c.gradient(&[2.0, 1.0, 1.0, 1.0]);
        assert_eq!(&g[..4], &[2.0, 0.0, -2.0, 0.0]);
        let g = c.gradient(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(&g[..4], &[0.0; 4]);
        // rigid rotation direction of the bond is tangent to g's level set
        let q = [2.0, 1.5, 1.2, 0.9];
        let g = c.gradient(&q);
        let s = c.separation(&q);
        let v_rot = [-s[1], s[0], s[1], -s[0]];
        let dot: f64 = g[..4].iter().zip(&v_rot).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-14);
    }

    #[test]
    fn rest_length_validated() {
        assert!(DumbbellConstraint::new(0, 1, 2.6, 5.0, 2).is_err());
        assert!(DumbbellConstraint::new(0, 0, 1.0, 5.0, 2).is_err());
        let a = DumbbellConstraint::new(0, 1, 1.0, 5.0, 2).unwrap();
        let b = DumbbellConstraint::new(1, 2, 1.0, 5.0, 2).unwrap();
        assert_eq!(
            ConstraintSet::new(vec![a, b], 3),
            Err(ConstraintError::ParticleReused(1))
        );
    }

    #[test]
    fn projection_shrinks_about_midpoint() {
        let sp = spec(2, 2, 5.0);
        let cs = ConstraintSet::dumbbells(1, 1.0, 5.0, 2).unwrap();
        let (q, _) = project_to_manifold(&[2.1, 1.0, 1.0, 1.0], &[0.0; 4], &cs, &sp).unwrap();
        assert!((q[0] - 2.05).abs() < 1e-14 && (q[2] - 1.05).abs() < 1e-14);
        assert_eq!(q[1], 1.0);
        assert!(cs.max_violation(&q) < 1e-14);
    }

    #[test]
    fn projection_is_identity_on_manifold() {
        let sp = spec(2, 2, 5.0);
        let cs = ConstraintSet::dumbbells(1, 1.0, 5.0, 2).unwrap();
        let q0 = [2.0, 1.0, 1.0, 1.0];
        let p0 = [0.0, 0.3, 0.0, -0.7];
        let (q, p) = project_to_manifold(&q0, &p0, &cs, &sp).unwrap();
        for (a, b) in q.iter().zip(&q0).chain(p.iter().zip(&p0)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn projection_makes_momenta_tangent() {
        let sp = spec(6, 3, 6.0);
        let cs = ConstraintSet::dumbbells(3, 1.0, 6.0, 3).unwrap();
        let mut rng = RngStream::new(1, StreamPurpose::Initialization);
        let q: Vec<f64> = (0..18).map(|_| rng.uniform() * 6.0).collect();
        let p: Vec<f64> = (0..18).map(|_| rng.gaussian()).collect();
        let (q, p) = project_to_manifold(&q, &p, &cs, &sp).unwrap();
        assert!(cs.max_violation(&q) < 1e-12);
        assert!(cs.max_tangency(&q, &p, &sp) < 1e-12);
        let (q2, p2) = project_to_manifold(&q, &p, &cs, &sp).unwrap();
        for (a, b) in q.iter().zip(&q2).chain(p.iter().zip(&p2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_pair_rejected() {
        let sp = spec(2, 2, 5.0);
        let cs = ConstraintSet::dumbbells(1, 1.0, 5.0, 2).unwrap();
        assert_eq!(
            project_to_manifold(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4], &cs, &sp),
            Err(ConstraintError::Degenerate(0))
        );
    }

    #[test]
    fn placement_respects_spacing() {
        let l = (60.0f64 / 0.998).sqrt();
        let sp = spec(60, 2, l);
        let mut rng = RngStream::new(5, StreamPurpose::Initialization);
        let q = place_dumbbells(30, 1.0, &sp, 0.7, &mut rng).unwrap();
        let cs = ConstraintSet::dumbbells(30, 1.0, l, 2).unwrap();
        assert!(cs.max_violation(&q) < 1e-12);
        for i in 0..60 {
            for j in 0..i {
                if i / 2 == j / 2 {
                    continue;
                }
                let r = crate::potential::minimum_image_distance(&q[2 * i..2 * i + 2], &q[2 * j..2 * j + 2], l);
                assert!(r >= 0.7);
            }
        }
    }
}
