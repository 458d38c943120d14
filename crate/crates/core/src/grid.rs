//! Nested coarse/fine structured grids on the unit square and their local
//! domains.
//!
//! Fine nodes are addressed by `(ix, iy)` with `0 <= ix, iy < n_fine`; nodal
//! arrays are stored row-major with `y` as the outer index. Coarse nodes are
//! addressed the same way on the `(n_coarse + 1)^2` coarse lattice, and local
//! domains are numbered lexicographically by `(cy, cx)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fine grid of `n_fine x n_fine` nodes refining an `n_coarse x n_coarse`
/// grid of square cells on `(0, 1)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPair {
    n_coarse: usize,
    n_fine: usize,
}

impl GridPair {
    pub fn new(n_coarse: usize, n_fine: usize) -> Result<Self> {
        if n_coarse < 2 {
            return Err(Error::Config(format!("n_coarse must be at least 2, got {n_coarse}")));
        }
        if n_fine < 2 || (n_fine - 1) % n_coarse != 0 {
            return Err(Error::Config(format!(
                "fine grid with {n_fine} nodes per dimension does not refine {n_coarse} coarse cells"
            )));
        }
        if n_fine - 1 == n_coarse {
            return Err(Error::Config("fine grid must be strictly finer than the coarse grid".into()));
        }
        Ok(Self { n_coarse, n_fine })
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// Coarse cell width `H`.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }

    /// Fine cell width `h`.
    pub fn fine_h(&self) -> f64 {
        1.0 / (self.n_fine - 1) as f64
    }

    /// Fine cells per coarse cell along one axis.
    pub fn ratio(&self) -> usize {
        (self.n_fine - 1) / self.n_coarse
    }

    /// Number of local domains, one per coarse node.
    pub fn n_domains(&self) -> usize {
        (self.n_coarse + 1) * (self.n_coarse + 1)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_fine * self.n_fine
    }

    /// Number of fine nodes off the Dirichlet boundary.
    pub fn n_interior(&self) -> usize {
        (self.n_fine - 2) * (self.n_fine - 2)
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n_fine + ix
    }

    pub fn node_coord(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.fine_h();
        (ix as f64 * h, iy as f64 * h)
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix + 1 == self.n_fine || iy + 1 == self.n_fine
    }

    /// Index of a fine node among interior unknowns, or `None` on the boundary.
    pub fn interior_index(&self, ix: usize, iy: usize) -> Option<usize> {
        if self.is_boundary(ix, iy) {
            None
        } else {
            Some((iy - 1) * (self.n_fine - 2) + (ix - 1))
        }
    }

    /// Bounding box of the whole fine grid.
    pub fn whole(&self) -> PatchBox {
        PatchBox { x0: 0, x1: self.n_fine - 1, y0: 0, y1: self.n_fine - 1 }
    }

    pub fn local_domain(&self, index: usize) -> LocalDomain {
        let nc = self.n_coarse;
        let (cx, cy) = (index % (nc + 1), index / (nc + 1));
        let xs: Vec<usize> = [cx.checked_sub(1), (cx < nc).then_some(cx)].into_iter().flatten().collect();
        let ys: Vec<usize> = [cy.checked_sub(1), (cy < nc).then_some(cy)].into_iter().flatten().collect();
        let cells: Vec<(usize, usize)> =
            ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let kind = match cells.len() {
            4 => DomainKind::Full,
            2 => DomainKind::Half,
            1 => DomainKind::Corner,
            n => unreachable!("coarse node touches {n} cells"),
        };
        let r = self.ratio();
        let patch = PatchBox {
            x0: cx.saturating_sub(1) * r,
            x1: (cx + 1).min(nc) * r,
            y0: cy.saturating_sub(1) * r,
            y1: (cy + 1).min(nc) * r,
        };
        let orientation = canonical_orientation(kind, cx, cy, nc);
        LocalDomain { index, coarse_node: (cx, cy), cells, kind, patch, orientation }
    }

    /// All local domains in lexicographic `(row, column)` order of their
    /// coarse nodes.
    pub fn local_domains(&self) -> Vec<LocalDomain> {
        (0..self.n_domains()).map(|i| self.local_domain(i)).collect()
    }

    /// Copy the values of a whole-grid nodal field inside `patch`.
    pub fn extract_patch(&self, field: &NodalField, patch: &PatchBox) -> Result<NodalField> {
        field.expect_shape(self.n_fine, self.n_fine)?;
        let mut values = Vec::with_capacity(patch.len());
        for iy in patch.y0..=patch.y1 {
            let row = iy * self.n_fine;
            values.extend_from_slice(&field.values[row + patch.x0..=row + patch.x1]);
        }
        Ok(NodalField { nx: patch.nx(), ny: patch.ny(), values })
    }
}

/// Geometric type of a local domain, by the number of coarse cells it holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Full,
    Half,
    Corner,
}

impl DomainKind {
    pub const ALL: [DomainKind; 3] = [DomainKind::Full, DomainKind::Half, DomainKind::Corner];

    pub fn name(&self) -> &'static str {
        match self {
            DomainKind::Full => "full",
            DomainKind::Half => "half",
            DomainKind::Corner => "corner",
        }
    }

    /// `(nx, ny)` of the canonical patch for a grid.
    pub fn canonical_shape(&self, grid: &GridPair) -> (usize, usize) {
        let r = grid.ratio();
        match self {
            DomainKind::Full => (2 * r + 1, 2 * r + 1),
            DomainKind::Half => (2 * r + 1, r + 1),
            DomainKind::Corner => (r + 1, r + 1),
        }
    }
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DomainKind::Full),
            "half" => Ok(DomainKind::Half),
            "corner" => Ok(DomainKind::Corner),
            other => Err(Error::Config(format!("unknown domain kind '{other}'"))),
        }
    }
}

/// Inclusive fine-index bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PatchBox {
    pub fn nx(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn ny(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Local (row-major) index of global node `(ix, iy)`.
    pub fn local_index(&self, ix: usize, iy: usize) -> usize {
        (iy - self.y0) * self.nx() + (ix - self.x0)
    }

    /// Global node coordinates of local index `k`.
    pub fn global_node(&self, k: usize) -> (usize, usize) {
        (self.x0 + k % self.nx(), self.y0 + k / self.nx())
    }
}

/// Rotation by `90° * code` counter-clockwise that maps a local domain to
/// its canonical pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Orientation(u8);

impl Orientation {
    pub const IDENTITY: Orientation = Orientation(0);

    pub fn new(code: u8) -> Result<Self> {
        if code < 4 {
            Ok(Self(code))
        } else {
            Err(Error::Config(format!("orientation code must be in 0..4, got {code}")))
        }
    }

    pub fn code(&self) -> u8 {
        self.0
    }

    pub fn inverse(&self) -> Orientation {
        Orientation((4 - self.0) % 4)
    }
}

/// Canonical poses: full domains are left alone, half domains put the coarse
/// node on the top edge and corner domains put it at the top-left corner.
fn canonical_orientation(kind: DomainKind, cx: usize, cy: usize, nc: usize) -> Orientation {
    // Position of the coarse node relative to the patch center, in {-1, 0, 1}.
    let px: i32 = if kind == DomainKind::Full {
        0
    } else if cx == 0 {
        -1
    } else if cx == nc {
        1
    } else {
        0
    };
    let py: i32 = if kind == DomainKind::Full {
        0
    } else if cy == 0 {
        -1
    } else if cy == nc {
        1
    } else {
        0
    };
    let target = match kind {
        DomainKind::Full => return Orientation::IDENTITY,
        DomainKind::Half => (0, 1),
        DomainKind::Corner => (-1, 1),
    };
    let mut p = (px, py);
    for k in 0..4u8 {
        if p == target {
            return Orientation(k);
        }
        p = (-p.1, p.0);
    }
    unreachable!("no rotation reaches the canonical pose")
}

/// Nodal values on a rectangular block of fine nodes (the whole grid or a
/// patch), row-major with `y` outer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::Shape {
                expected: format!("{nx}x{ny} = {}", nx * ny),
                got: values.len().to_string(),
            });
        }
        Ok(Self { nx, ny, values })
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Self { nx, ny, values: vec![value; nx * ny] }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                values.push(f(ix, iy));
            }
        }
        Self { nx, ny, values }
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn expect_shape(&self, nx: usize, ny: usize) -> Result<()> {
        if self.nx != nx || self.ny != ny || self.values.len() != nx * ny {
            return Err(Error::Shape {
                expected: format!("{nx}x{ny}"),
                got: format!("{}x{} ({} values)", self.nx, self.ny, self.values.len()),
            });
        }
        Ok(())
    }

    /// Rotate the block by 90° counter-clockwise about its center.
    pub fn rotate_ccw(&self) -> NodalField {
        let (nx, ny) = (self.nx, self.ny);
        // New block is ny wide and nx tall; new (x', y') reads old (y', ny - 1 - x').
        let values = (0..nx)
            .flat_map(|y2| (0..ny).map(move |x2| (x2, y2)))
            .map(|(x2, y2)| self.values[(ny - 1 - x2) * nx + y2])
            .collect();
        NodalField { nx: ny, ny: nx, values }
    }

    pub fn rotate(&self, orientation: Orientation) -> NodalField {
        let mut out = self.clone();
        for _ in 0..orientation.code() {
            out = out.rotate_ccw();
        }
        out
    }
}

/// One overlapping local domain `ω_i`: the union of coarse cells touching
/// coarse node `x_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDomain {
    pub index: usize,
    pub coarse_node: (usize, usize),
    pub cells: Vec<(usize, usize)>,
    pub kind: DomainKind,
    pub patch: PatchBox,
    pub orientation: Orientation,
}

/// Bilinear coarse hat function of one local domain, sampled on its patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionFunction {
    pub domain_index: usize,
    pub values: NodalField,
}

pub fn partition_of_unity(grid: &GridPair, domain: &LocalDomain) -> PartitionFunction {
    let r = grid.ratio() as f64;
    let (cx, cy) = domain.coarse_node;
    let (nx0, ny0) = (cx * grid.ratio(), cy * grid.ratio());
    let p = domain.patch;
    let values = NodalField::from_fn(p.nx(), p.ny(), |lx, ly| {
        let dx = (p.x0 + lx).abs_diff(nx0) as f64 / r;
        let dy = (p.y0 + ly).abs_diff(ny0) as f64 / r;
        (1.0 - dx).max(0.0) * (1.0 - dy).max(0.0)
    });
    PartitionFunction { domain_index: domain.index, values }
}

/// Rotate patch data of `domain` into the canonical pose of its kind.
pub fn canonicalize(field: &NodalField, domain: &LocalDomain) -> Result<(NodalField, Orientation)> {
    field.expect_shape(domain.patch.nx(), domain.patch.ny())?;
    Ok((field.rotate(domain.orientation), domain.orientation))
}

/// Exact inverse of [`canonicalize`].
pub fn decanonicalize(field: &NodalField, orientation: Orientation) -> NodalField {
    field.rotate(orientation.inverse())
}
