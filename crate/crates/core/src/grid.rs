//! Space-time lattices and sampled fields.
//!
//! A [`Lattice`] covers the cylinder `[0, t_max] x M` with uniformly spaced
//! samples including both endpoints of every axis. Fields are stored
//! t-major as complex doubles; real data rides in the real part.
//!
//! The binary field format is little endian:
//! magic `BLGRID1\0`, then `u8` payload kind (0 real, 1 complex), `u8`
//! spatial dimension, `u8` domain tag (0 interval, 1 rectangle, 2 disk),
//! five zero pad bytes, `f64 t_max`, two `f64` domain parameters, `u64`
//! sample counts `nt nx ny`, then the payload as `f64` values (re, im
//! interleaved when complex).

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 8] = b"BLGRID1\0";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Domain {
    Interval { length: f64 },
    Rect { lx: f64, ly: f64 },
    Disk { radius: f64 },
}

impl Domain {
    /// Spatial dimension.
    pub fn n(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Extent of the bounding box along each spatial axis. Disks are boxed
    /// as `[-R, R]^2`.
    pub fn extent(&self) -> [f64; 2] {
        match self {
            Domain::Interval { length } => [*length, 0.0],
            Domain::Rect { lx, ly } => [*lx, *ly],
            Domain::Disk { radius } => [2.0 * radius, 2.0 * radius],
        }
    }

    /// Lower corner of the bounding box.
    pub fn origin(&self) -> [f64; 2] {
        match self {
            Domain::Disk { radius } => [-radius, -radius],
            _ => [0.0, 0.0],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { length } => x[0] >= 0.0 && x[0] <= *length,
            Domain::Rect { lx, ly } => x[0] >= 0.0 && x[0] <= *lx && x[1] >= 0.0 && x[1] <= *ly,
            Domain::Disk { radius } => x[0] * x[0] + x[1] * x[1] <= radius * radius,
        }
    }

    /// Signed distance to the boundary, positive inside (exact for the
    /// interval and disk, exact for rectangles in the max metric sense).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { length } => x[0].min(length - x[0]),
            Domain::Rect { lx, ly } => {
                let dx = x[0].min(lx - x[0]);
                let dy = x[1].min(ly - x[1]);
                dx.min(dy)
            }
            Domain::Disk { radius } => radius - (x[0] * x[0] + x[1] * x[1]).sqrt(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Domain::Interval { .. } => 0,
            Domain::Rect { .. } => 1,
            Domain::Disk { .. } => 2,
        }
    }

    fn params(&self) -> [f64; 2] {
        match self {
            Domain::Interval { length } => [*length, 0.0],
            Domain::Rect { lx, ly } => [*lx, *ly],
            Domain::Disk { radius } => [*radius, 0.0],
        }
    }

    fn from_tag(tag: u8, p: [f64; 2]) -> Result<Domain> {
        match tag {
            0 => Ok(Domain::Interval { length: p[0] }),
            1 => Ok(Domain::Rect { lx: p[0], ly: p[1] }),
            2 => Ok(Domain::Disk { radius: p[0] }),
            _ => Err(Error::GridFormat(format!("unknown domain tag {tag}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub t_max: f64,
    pub domain: Domain,
    /// Samples along t (including both ends).
    pub nt: usize,
    /// Samples along x and y (y count is 1 in one spatial dimension).
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn new(t_max: f64, domain: Domain, nt: usize, nx: usize, ny: usize) -> Arc<Lattice> {
        assert!(nt >= 2 && nx >= 2);
        assert!(if domain.n() == 1 { ny == 1 } else { ny >= 2 });
        Arc::new(Lattice {
            t_max,
            domain,
            nt,
            nx,
            ny,
        })
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.nt - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        self.domain.extent()[0] / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        if self.ny > 1 {
            self.domain.extent()[1] / (self.ny - 1) as f64
        } else {
            0.0
        }
    }

    pub fn t(&self, it: usize) -> f64 {
        it as f64 * self.dt()
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.domain.origin()[0] + ix as f64 * self.dx()
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.domain.origin()[1] + iy as f64 * self.dy()
    }

    /// Space-time point of a node, as `[t, x]` or `[t, x, y]`.
    pub fn point(&self, it: usize, ix: usize, iy: usize) -> Vec<f64> {
        if self.n() == 1 {
            vec![self.t(it), self.x(ix)]
        } else {
            vec![self.t(it), self.x(ix), self.y(iy)]
        }
    }

    pub fn len(&self) -> usize {
        self.nt * self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn idx(&self, it: usize, ix: usize, iy: usize) -> usize {
        (it * self.ny + iy) * self.nx + ix
    }

    /// Spatial cell volume of the bounding box lattice.
    pub fn cell_volume(&self) -> f64 {
        if self.n() == 1 {
            self.dx()
        } else {
            self.dx() * self.dy()
        }
    }

    /// Trapezoid weight of a node in the space-time product rule.
    pub fn weight(&self, it: usize, ix: usize, iy: usize) -> f64 {
        let mut w = 1.0;
        if it == 0 || it + 1 == self.nt {
            w *= 0.5;
        }
        if ix == 0 || ix + 1 == self.nx {
            w *= 0.5;
        }
        if self.ny > 1 && (iy == 0 || iy + 1 == self.ny) {
            w *= 0.5;
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct GridField {
    pub lattice: Arc<Lattice>,
    pub data: Vec<Complex64>,
}

impl GridField {
    pub fn zeros(lattice: &Arc<Lattice>) -> GridField {
        GridField {
            lattice: Arc::clone(lattice),
            data: vec![Complex64::new(0.0, 0.0); lattice.len()],
        }
    }

    pub fn from_fn<F: FnMut(f64, f64, f64) -> Complex64>(
        lattice: &Arc<Lattice>,
        mut f: F,
    ) -> GridField {
        let mut out = Self::zeros(lattice);
        for it in 0..lattice.nt {
            for iy in 0..lattice.ny {
                for ix in 0..lattice.nx {
                    out.data[lattice.idx(it, ix, iy)] =
                        f(lattice.t(it), lattice.x(ix), lattice.y(iy));
                }
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, it: usize, ix: usize, iy: usize) -> Complex64 {
        self.data[self.lattice.idx(it, ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, it: usize, ix: usize, iy: usize, v: Complex64) {
        let i = self.lattice.idx(it, ix, iy);
        self.data[i] = v;
    }

    pub fn scale(&mut self, k: Complex64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn axpy(&mut self, a: Complex64, other: &GridField) {
        assert_eq!(self.data.len(), other.data.len());
        for (u, v) in self.data.iter_mut().zip(other.data.iter()) {
            *u += a * v;
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Space-time L2 norm with trapezoid weights on the bounding box
    /// (samples outside a disk domain are stored as zero by the solvers).
    pub fn l2_norm(&self) -> f64 {
        let lat = &self.lattice;
        let mut acc = 0.0;
        for it in 0..lat.nt {
            for iy in 0..lat.ny {
                for ix in 0..lat.nx {
                    let v = self.data[lat.idx(it, ix, iy)].norm_sqr();
                    acc += v * lat.weight(it, ix, iy);
                }
            }
        }
        (acc * lat.dt() * lat.cell_volume()).sqrt()
    }

    /// L2 norm of one time slice (spatial integral only).
    pub fn slice_l2(&self, it: usize) -> f64 {
        let lat = &self.lattice;
        let mut acc = 0.0;
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                let mut w = 1.0;
                if ix == 0 || ix + 1 == lat.nx {
                    w *= 0.5;
                }
                if lat.ny > 1 && (iy == 0 || iy + 1 == lat.ny) {
                    w *= 0.5;
                }
                acc += self.data[lat.idx(it, ix, iy)].norm_sqr() * w;
            }
        }
        (acc * lat.cell_volume()).sqrt()
    }

    /// Discrete space-time H1 seminorm by central differences.
    pub fn h1_seminorm(&self) -> f64 {
        let lat = &self.lattice;
        let dt = lat.dt();
        let dx = lat.dx();
        let dy = lat.dy();
        let mut acc = 0.0;
        for it in 1..lat.nt - 1 {
            for iy in 0..lat.ny {
                for ix in 1..lat.nx - 1 {
                    let gt = (self.get(it + 1, ix, iy) - self.get(it - 1, ix, iy)) / (2.0 * dt);
                    let gx = (self.get(it, ix + 1, iy) - self.get(it, ix - 1, iy)) / (2.0 * dx);
                    let mut s = gt.norm_sqr() + gx.norm_sqr();
                    if lat.ny > 1 && iy >= 1 && iy + 1 < lat.ny {
                        let gy = (self.get(it, ix, iy + 1) - self.get(it, ix, iy - 1)) / (2.0 * dy);
                        s += gy.norm_sqr();
                    }
                    acc += s;
                }
            }
        }
        (acc * lat.dt() * lat.cell_volume()).sqrt()
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|v| v.im == 0.0)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let lat = &self.lattice;
        let kind: u8 = if self.is_real() { 0 } else { 1 };
        w.write_all(MAGIC)?;
        w.write_all(&[kind, lat.n() as u8, lat.domain.tag(), 0, 0, 0, 0, 0])?;
        w.write_all(&lat.t_max.to_le_bytes())?;
        for p in lat.domain.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        for count in [lat.nt as u64, lat.nx as u64, lat.ny as u64] {
            w.write_all(&count.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.re.to_le_bytes())?;
            if kind == 1 {
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_from(r: &mut impl Read) -> Result<GridField> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::GridFormat("bad magic".into()));
        }
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        let kind = head[0];
        if kind > 1 {
            return Err(Error::GridFormat(format!("unknown payload kind {kind}")));
        }
        let mut f64buf = [0u8; 8];
        let mut next_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let t_max = next_f64(r)?;
        let p0 = next_f64(r)?;
        let p1 = next_f64(r)?;
        let domain = Domain::from_tag(head[2], [p0, p1])?;
        if domain.n() != head[1] as usize {
            return Err(Error::GridFormat("dimension/domain mismatch".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut counts = [0usize; 3];
        for c in &mut counts {
            r.read_exact(&mut u64buf)?;
            let v = u64::from_le_bytes(u64buf);
            if v == 0 || v > 1 << 32 {
                return Err(Error::GridFormat(format!("bad sample count {v}")));
            }
            *c = v as usize;
        }
        let lattice = Lattice::new(t_max, domain, counts[0], counts[1], counts[2]);
        let mut field = GridField::zeros(&lattice);
        for v in &mut field.data {
            let re = next_f64(r)?;
            let im = if kind == 1 { next_f64(r)? } else { 0.0 };
            *v = Complex64::new(re, im);
        }
        // must be at EOF for files; extra payload means corruption
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => Ok(field),
            Ok(_) => Err(Error::GridFormat("trailing bytes after payload".into())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn load(path: &Path) -> Result<GridField> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Least squares slope of `log2(norm)` against `log2(rho)` over the last
/// `points` entries; used by every decay-rate check.
pub fn loglog_slope(rhos: &[f64], norms: &[f64], points: usize) -> f64 {
    assert_eq!(rhos.len(), norms.len());
    let k = points.min(rhos.len());
    let xs: Vec<f64> = rhos[rhos.len() - k..].iter().map(|r| r.log2()).collect();
    let ys: Vec<f64> = norms[norms.len() - k..]
        .iter()
        .map(|v| v.max(1e-300).log2())
        .collect();
    let n = k as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
