use super::{min_image, CellList, Potential, PotentialError, PotentialSplit};

#[inline]
fn lj_core(r2: f64) -> f64 {
    let ir6 = 1.0 / (r2 * r2 * r2);
    4.0 * (ir6 * ir6 - ir6)
}

/// `(dU/dr) / r` of the unshifted 12-6 form, as a function of `r²`.
#[inline]
fn lj_core_slope(r2: f64) -> f64 {
    let ir2 = 1.0 / r2;
    let ir6 = ir2 * ir2 * ir2;
    (24.0 * ir6 - 48.0 * ir6 * ir6) * ir2
}

/// Truncated and shifted pair energy `f(r) − f(r_c)` for `r < r_c`, zero beyond,
/// with `f(r) = 4(r⁻¹² − r⁻⁶)`. The energy is continuous at the cutoff; its
/// derivative is not.
pub fn lj_pair_energy(r: f64, r_cut: f64) -> Result<f64, PotentialError> {
    if !(r > 0.0) {
        return Err(PotentialError::NonPositiveDistance(r));
    }
    if r < r_cut {
        Ok(lj_core(r * r) - lj_core(r_cut * r_cut))
    } else {
        Ok(0.0)
    }
}

/// Which part of the truncated pair energy an evaluator carries.
///
/// With split radius `r_s`, `Inner` is `U_LJ(r) − U_LJ(r_s)` for `r < r_s` and
/// `Outer` is `U_LJ(min(r, r_s))` below the cutoff. Both parts are continuous
/// and sum to `U_LJ` at every distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairWindow {
    Full,
    Inner { r_split: f64 },
    Outer { r_split: f64 },
}

/// Truncated Lennard-Jones fluid in a periodic box with minimum-image pair
/// distances.
#[derive(Debug, Clone)]
pub struct LennardJones {
    dim: usize,
    box_length: f64,
    r_cut: f64,
    shift: f64,
    window: PairWindow,
    rs2: f64,
    u_split: f64,
    range2: f64,
    use_cells: bool,
    cells: Option<CellList>,
}

impl LennardJones {
    pub fn new(dim: usize, box_length: f64, r_cut: f64) -> Result<Self, PotentialError> {
        let max = 0.5 * box_length;
        if !(r_cut > 0.0 && r_cut <= max) {
            return Err(PotentialError::BadCutoff { r_cut, max });
        }
        Ok(Self::unchecked(dim, box_length, r_cut))
    }

    /// Like [`LennardJones::new`] but allows `r_cut` beyond half the box.
    /// Each pair then still interacts only through its nearest image, so the
    /// energy stays continuous while its gradient jumps where the nearest
    /// image switches. Small boxes at fixed density need this.
    pub fn nearest_image_only(dim: usize, box_length: f64, r_cut: f64) -> Result<Self, PotentialError> {
        if !(r_cut > 0.0 && r_cut.is_finite()) {
            return Err(PotentialError::BadCutoff {
                r_cut,
                max: f64::INFINITY,
            });
        }
        Ok(Self::unchecked(dim, box_length, r_cut))
    }

    fn unchecked(dim: usize, box_length: f64, r_cut: f64) -> Self {
        let rc2 = r_cut * r_cut;
        Self {
            dim,
            box_length,
            r_cut,
            shift: lj_core(rc2),
            window: PairWindow::Full,
            rs2: rc2,
            u_split: 0.0,
            range2: rc2,
            use_cells: false,
            cells: None,
        }
    }

    /// Enables the cell-list path for set-scoped evaluations and a freshly
    /// binned cell list for whole-system evaluations. The maintained list must
    /// be kept current through [`Potential::sync`] / [`Potential::commit`].
    pub fn with_cell_list(mut self, enabled: bool) -> Self {
        self.use_cells = enabled;
        self
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn window(&self) -> PairWindow {
        self.window
    }

    /// Short-range / long-range split at `r_split` for RESPA.
    pub fn split(&self, r_split: f64) -> Result<PotentialSplit<LennardJones, LennardJones>, PotentialError> {
        if !(r_split > 0.0 && r_split < self.r_cut) {
            return Err(PotentialError::BadSplit {
                r_split,
                r_cut: self.r_cut,
            });
        }
        let rs2 = r_split * r_split;
        let u_split = lj_core(rs2) - self.shift;
        let mut fast = self.clone();
        fast.window = PairWindow::Inner { r_split };
        fast.rs2 = rs2;
        fast.u_split = u_split;
        fast.range2 = rs2;
        fast.cells = None;
        let mut slow = self.clone();
        slow.window = PairWindow::Outer { r_split };
        slow.rs2 = rs2;
        slow.u_split = u_split;
        slow.cells = None;
        Ok(PotentialSplit::new(fast, slow))
    }

    /// Pair energy and `(dU/dr)/r` for a squared distance inside the range.
    #[inline]
    fn pair(&self, r2: f64) -> (f64, f64) {
        match self.window {
            PairWindow::Full => (lj_core(r2) - self.shift, lj_core_slope(r2)),
            PairWindow::Inner { .. } => (lj_core(r2) - self.shift - self.u_split, lj_core_slope(r2)),
            PairWindow::Outer { .. } => {
                if r2 < self.rs2 {
                    (self.u_split, 0.0)
                } else {
                    (lj_core(r2) - self.shift, lj_core_slope(r2))
                }
            }
        }
    }

    #[inline]
    fn separation(&self, q: &[f64], i: usize, j: usize, dx: &mut [f64; 3]) -> f64 {
        let d = self.dim;
        let mut r2 = 0.0;
        for a in 0..d {
            let v = min_image(q[i * d + a] - q[j * d + a], self.box_length);
            dx[a] = v;
            r2 += v * v;
        }
        r2
    }

    /// Reference `O(n²)` double loop over all pairs.
    pub fn energy_all_pairs(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64, PotentialError> {
        let d = self.dim;
        let n = q.len() / d;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut dx = [0.0; 3];
        let mut e = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r2 = self.separation(q, i, j, &mut dx);
                if r2 >= self.range2 {
                    continue;
                }
                if r2 == 0.0 {
                    return Err(PotentialError::Overlap { i, j });
                }
                let (u, s) = self.pair(r2);
                e += u;
                if let Some(g) = grad.as_deref_mut() {
                    for a in 0..d {
                        g[i * d + a] += s * dx[a];
                        g[j * d + a] -= s * dx[a];
                    }
                }
            }
        }
        Ok(e)
    }

    fn energy_with_cells(
        &self,
        q: &[f64],
        cells: &CellList,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64, PotentialError> {
        let d = self.dim;
        let n = q.len() / d;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut dx = [0.0; 3];
        let mut e = 0.0;
        let mut overlap = None;
        for i in 0..n {
            cells.for_each_candidate(&q[i * d..(i + 1) * d], |j| {
                if j <= i {
                    return;
                }
                let r2 = self.separation(q, i, j, &mut dx);
                if r2 >= self.range2 {
                    return;
                }
                if r2 == 0.0 {
                    overlap.get_or_insert(PotentialError::Overlap { i, j });
                    return;
                }
                let (u, s) = self.pair(r2);
                e += u;
                if let Some(g) = grad.as_deref_mut() {
                    for a in 0..d {
                        g[i * d + a] += s * dx[a];
                        g[j * d + a] -= s * dx[a];
                    }
                }
            });
        }
        match overlap {
            Some(err) => Err(err),
            None => Ok(e),
        }
    }

    fn whole(&self, q: &[f64], grad: Option<&mut [f64]>) -> Result<f64, PotentialError> {
        if self.use_cells {
            if let Some(cells) = CellList::new(q, self.dim, self.box_length, self.range2.sqrt()) {
                return self.energy_with_cells(q, &cells, grad);
            }
        }
        self.energy_all_pairs(q, grad)
    }

    fn set_eval(&self, q: &[f64], set: &[usize], mut grad: Option<&mut [f64]>) -> Result<f64, PotentialError> {
        let d = self.dim;
        let n = q.len() / d;
        if set.len() == n {
            // whole system moves: evaluate globally and gather the blocks
            return match grad {
                None => self.whole(q, None),
                Some(g) => {
                    let mut full = vec![0.0; q.len()];
                    let e = self.whole(q, Some(&mut full))?;
                    for (b, &i) in set.iter().enumerate() {
                        g[b * d..(b + 1) * d].copy_from_slice(&full[i * d..(i + 1) * d]);
                    }
                    Ok(e)
                }
            };
        }
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mask: Option<Vec<bool>> = (set.len() > 8).then(|| {
            let mut m = vec![false; n];
            for &i in set {
                m[i] = true;
            }
            m
        });
        let in_set = |j: usize| match &mask {
            Some(m) => m[j],
            None => set.contains(&j),
        };
        let cells = if self.use_cells { self.cells.as_ref() } else { None };
        let mut dx = [0.0; 3];
        let mut e = 0.0;
        let mut overlap = None;
        for (a, &i) in set.iter().enumerate() {
            let mut visit = |j: usize| {
                if j == i || in_set(j) {
                    return;
                }
                let r2 = self.separation(q, i, j, &mut dx);
                if r2 >= self.range2 {
                    return;
                }
                if r2 == 0.0 {
                    overlap.get_or_insert(PotentialError::Overlap { i, j });
                    return;
                }
                let (u, s) = self.pair(r2);
                e += u;
                if let Some(g) = grad.as_deref_mut() {
                    for c in 0..d {
                        g[a * d + c] += s * dx[c];
                    }
                }
            };
            match cells {
                Some(c) => c.for_each_candidate(&q[i * d..(i + 1) * d], visit),
                None => (0..n).for_each(&mut visit),
            }
            // pairs inside the set, counted once
            for (b, &j) in set.iter().enumerate().skip(a + 1) {
                let r2 = self.separation(q, i, j, &mut dx);
                if r2 >= self.range2 {
                    continue;
                }
                if r2 == 0.0 {
                    overlap.get_or_insert(PotentialError::Overlap { i, j });
                    continue;
                }
                let (u, s) = self.pair(r2);
                e += u;
                if let Some(g) = grad.as_deref_mut() {
                    for c in 0..d {
                        g[a * d + c] += s * dx[c];
                        g[b * d + c] -= s * dx[c];
                    }
                }
            }
        }
        match overlap {
            Some(err) => Err(err),
            None => Ok(e),
        }
    }
}

impl Potential for LennardJones {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, q: &[f64]) -> Result<f64, PotentialError> {
        self.whole(q, None)
    }

    fn energy_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64, PotentialError> {
        self.whole(q, Some(grad))
    }

    fn set_energy(&self, q: &[f64], set: &[usize]) -> Result<f64, PotentialError> {
        self.set_eval(q, set, None)
    }

    fn set_energy_and_gradient(
        &self,
        q: &[f64],
        set: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, PotentialError> {
        self.set_eval(q, set, Some(grad))
    }

    fn commit(&mut self, q: &[f64], set: &[usize]) {
        let d = self.dim;
        if let Some(cells) = self.cells.as_mut() {
            for &i in set {
                cells.update(i, &q[i * d..(i + 1) * d]);
            }
        }
    }

    fn sync(&mut self, q: &[f64]) {
        self.cells = if self.use_cells {
            CellList::new(q, self.dim, self.box_length, self.range2.sqrt())
        } else {
            None
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(r: f64) -> f64 {
        4.0 * (r.powi(-12) - r.powi(-6))
    }

    #[test]
    fn pair_energy_examples() {
        assert_eq!(lj_pair_energy(2.5, 2.5).unwrap(), 0.0);
        let rmin = 2f64.powf(1.0 / 6.0);
        let expect = -1.0 - f(2.5);
        assert!((lj_pair_energy(rmin, 2.5).unwrap() - expect).abs() < 1e-14);
        assert!((expect + 0.98368).abs() < 1e-5);
        let at_sigma = lj_pair_energy(1.0, 2.5).unwrap();
        assert!((at_sigma - 0.016317).abs() < 1e-6, "{at_sigma}");
        assert!(lj_pair_energy(0.0, 2.5).is_err());
        assert_eq!(lj_pair_energy(3.0, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_continuity() {
        let u = lj_pair_energy(2.5 - 1e-8, 2.5).unwrap();
        assert!(u.abs() < 1e-5);
    }

    #[test]
    fn cutoff_validated_against_box() {
        assert!(LennardJones::new(2, 5.0, 2.5).is_ok());
        assert!(LennardJones::new(2, 4.9, 2.5).is_err());
        assert!(LennardJones::new(2, 5.0, 0.0).is_err());
    }

    #[test]
    fn three_collinear_particles() {
        let r = 2f64.powf(1.0 / 6.0);
        let lj = LennardJones::new(2, 10.0, 2.5).unwrap();
        let q = [1.0, 1.0, 1.0 + r, 1.0, 1.0 + 2.0 * r, 1.0];
        let expect = 2.0 * (f(r) - f(2.5)) + (f(2.0 * r) - f(2.5));
        assert!((lj.energy(&q).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn overlap_is_an_error() {
        let lj = LennardJones::new(2, 6.0, 2.5).unwrap();
        let q = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(lj.energy(&q), Err(PotentialError::Overlap { i: 0, j: 1 }));
        assert!(lj.set_energy(&q, &[1]).is_err());
    }

    #[test]
    fn split_parts_sum_to_whole() {
        let lj = LennardJones::new(1, 10.0, 2.5).unwrap();
        let split = lj.split(1.5).unwrap();
        for k in 1..400 {
            let r = 0.85 + k as f64 * 0.005;
            let q = [1.0, 1.0 + r];
            let whole = lj.energy(&q).unwrap();
            let parts = split.fast.energy(&q).unwrap() + split.slow.energy(&q).unwrap();
            assert!((whole - parts).abs() < 1e-12 * whole.abs().max(1.0), "r={r}");
        }
        // each part is continuous at the split radius
        let below = [1.0, 1.0 + 1.5 - 1e-9];
        let above = [1.0, 1.0 + 1.5 + 1e-9];
        assert!((split.fast.energy(&below).unwrap() - split.fast.energy(&above).unwrap()).abs() < 1e-7);
        assert!((split.slow.energy(&below).unwrap() - split.slow.energy(&above).unwrap()).abs() < 1e-7);
        assert!(lj.split(2.5).is_err());
    }
}
