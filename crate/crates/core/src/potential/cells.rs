/// Uniform cell grid over the periodic box with cells at least as wide as the
/// interaction range, so every partner of a particle lies in the `3^d` block of
/// cells around it.
///
/// Only built when each axis holds at least three cells; with fewer the stencil
/// would wrap onto itself and the all-pairs loop is just as fast.
#[derive(Debug, Clone)]
pub struct CellList {
    dim: usize,
    n_side: usize,
    cell_len: f64,
    cells: Vec<Vec<usize>>,
    cell_of: Vec<usize>,
    stencils: Vec<Vec<usize>>,
}

impl CellList {
    pub fn new(q: &[f64], dim: usize, box_length: f64, min_cell: f64) -> Option<Self> {
        let n_side = (box_length / min_cell).floor() as usize;
        if n_side < 3 {
            return None;
        }
        let n_cells = n_side.pow(dim as u32);
        let stencils = (0..n_cells)
            .map(|c| Self::stencil_of(c, n_side, dim))
            .collect();
        let mut list = Self {
            dim,
            n_side,
            cell_len: box_length / n_side as f64,
            cells: vec![Vec::new(); n_cells],
            cell_of: Vec::new(),
            stencils,
        };
        list.rebuild(q);
        Some(list)
    }

    fn stencil_of(cell: usize, n_side: usize, dim: usize) -> Vec<usize> {
        let mut coords = [0usize; 3];
        let mut rest = cell;
        for c in coords.iter_mut().take(dim) {
            *c = rest % n_side;
            rest /= n_side;
        }
        let mut out = Vec::with_capacity(3usize.pow(dim as u32));
        let offsets: &[isize] = &[-1, 0, 1];
        let mut idx = [0usize; 3];
        loop {
            let mut flat = 0usize;
            let mut stride = 1usize;
            for a in 0..dim {
                let c = (coords[a] as isize + offsets[idx[a]]).rem_euclid(n_side as isize) as usize;
                flat += c * stride;
                stride *= n_side;
            }
            out.push(flat);
            // odometer over the 3^dim offsets
            let mut a = 0;
            loop {
                if a == dim {
                    return out;
                }
                idx[a] += 1;
                if idx[a] < 3 {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    #[inline]
    pub fn cell_index(&self, x: &[f64]) -> usize {
        let mut flat = 0usize;
        let mut stride = 1usize;
        for &xa in &x[..self.dim] {
            let c = ((xa / self.cell_len) as usize).min(self.n_side - 1);
            flat += c * stride;
            stride *= self.n_side;
        }
        flat
    }

    pub fn rebuild(&mut self, q: &[f64]) {
        for c in &mut self.cells {
            c.clear();
        }
        let n = q.len() / self.dim;
        self.cell_of.clear();
        self.cell_of.reserve(n);
        for i in 0..n {
            let c = self.cell_index(&q[i * self.dim..(i + 1) * self.dim]);
            self.cells[c].push(i);
            self.cell_of.push(c);
        }
    }

    /// Moves particle `i` to the cell containing `x`.
    pub fn update(&mut self, i: usize, x: &[f64]) {
        let new = self.cell_index(x);
        let old = self.cell_of[i];
        if new != old {
            let slot = &mut self.cells[old];
            if let Some(pos) = slot.iter().position(|&j| j == i) {
                slot.swap_remove(pos);
            }
            self.cells[new].push(i);
            self.cell_of[i] = new;
        }
    }

    /// Calls `f` for every particle filed in the stencil around `x`,
    /// including a particle sitting at `x` itself.
    #[inline]
    pub fn for_each_candidate(&self, x: &[f64], mut f: impl FnMut(usize)) {
        for &c in &self.stencils[self.cell_index(x)] {
            for &j in &self.cells[c] {
                f(j);
            }
        }
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }
}
