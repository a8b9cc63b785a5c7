//! Forward inference of the centralized and decentralized tensor-equivariant
//! networks, and the `EQWT` weight container.
//!
//! Weights are stored as 32-bit floats; all arithmetic runs in `f64`.
//!
//! Centralized network: `[A, R, B] → TEN (2-D equivariant over S, K) → FDA →
//! CFR`. Decentralized network at satellite `s`: a 1-D TEN over the local
//! features, a 2-D TEN over the other-satellite features followed by
//! attention pooling over the other satellites, concatenation, FDA and CFR.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use crate::channel::ScenarioInstance;
use crate::exec::Execution;
use crate::linalg::{outer, CMat, CVec, C64};
use crate::recovery::PredictedTuple;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EQWT";
pub const FORMAT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;
const W_FLOOR: f64 = 1e-6;
const LAMBDA_FLOOR: f64 = 1e-8;

/// Dense `a × b × d` tensor, feature dimension last. Second-order tensors
/// (`K × d`) use `a = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub a: usize,
    pub b: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(a: usize, b: usize, d: usize) -> Self {
        Self { a, b, d, data: vec![0.0; a * b * d] }
    }

    pub fn from_fn(a: usize, b: usize, d: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(a * b * d);
        for i in 0..a {
            for j in 0..b {
                for c in 0..d {
                    data.push(f(i, j, c));
                }
            }
        }
        Self { a, b, d, data }
    }

    pub fn rows(&self) -> usize {
        self.a * self.b
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.b + j) * self.d;
        &self.data[o..o + self.d]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.b + j) * self.d;
        &mut self.data[o..o + self.d]
    }

    /// New entry `(i, j)` is old `(perm_a[i], perm_b[j])`.
    pub fn permuted(&self, perm_a: &[usize], perm_b: &[usize]) -> Self {
        let mut out = Self::zeros(self.a, self.b, self.d);
        for i in 0..self.a {
            for j in 0..self.b {
                out.at_mut(i, j).copy_from_slice(self.at(perm_a[i], perm_b[j]));
            }
        }
        out
    }

    /// Concatenation along the feature dimension.
    pub fn concat(parts: &[&Tensor3]) -> Result<Self> {
        let (a, b) = (parts[0].a, parts[0].b);
        if parts.iter().any(|p| p.a != a || p.b != b) {
            return Err(Error::ShapeMismatch("concatenated tensors differ in leading dimensions".into()));
        }
        let d = parts.iter().map(|p| p.d).sum();
        let mut data = Vec::with_capacity(a * b * d);
        for i in 0..a {
            for j in 0..b {
                for p in parts {
                    data.extend_from_slice(p.at(i, j));
                }
            }
        }
        Ok(Self { a, b, d, data })
    }

    /// Collapses the leading dimension by taking slice `i`.
    pub fn slice_a(&self, i: usize) -> Self {
        let o = i * self.b * self.d;
        Self { a: 1, b: self.b, d: self.d, data: self.data[o..o + self.b * self.d].to_vec() }
    }

    /// Mean over dimension 1 (`a`), dimension 2 (`b`) or both.
    fn mean_over(&self, over_a: bool, over_b: bool) -> Self {
        let na = if over_a { 1 } else { self.a };
        let nb = if over_b { 1 } else { self.b };
        let mut out = Self::zeros(na, nb, self.d);
        for i in 0..self.a {
            for j in 0..self.b {
                let (oi, oj) = (if over_a { 0 } else { i }, if over_b { 0 } else { j });
                let src = self.at(i, j).to_vec();
                for (o, v) in out.at_mut(oi, oj).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        let count = (if over_a { self.a } else { 1 } * if over_b { self.b } else { 1 }) as f64;
        out.data.iter_mut().for_each(|v| *v /= count);
        out
    }
}

/// Arithmetic-operation tally of a forward pass. Counts depend only on the
/// tensor dimensions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTally {
    pub macs: u64,
    pub elementwise: u64,
    pub transcendental: u64,
}

impl OpTally {
    fn mac(&mut self, n: usize) {
        self.macs += n as u64;
    }

    fn elem(&mut self, n: usize) {
        self.elementwise += n as u64;
    }

    fn trans(&mut self, n: usize) {
        self.transcendental += n as u64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Centralized,
    Decentralized,
}

impl Arch {
    pub fn tag(self) -> u8 {
        match self {
            Arch::Centralized => 0,
            Arch::Decentralized => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Centralized => "centralized",
            Arch::Decentralized => "decentralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenDims {
    pub d_in: usize,
    pub d_h: usize,
    pub f: usize,
    pub g: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecDims {
    pub d_loc: usize,
    pub d_oth: usize,
    pub d_h_loc: usize,
    pub d_h_oth: usize,
    pub f_loc: usize,
    pub f_oth: usize,
    pub g: usize,
    pub layers: usize,
    pub heads: usize,
}

pub fn centralized_input_dim(m: usize, n: usize) -> usize {
    8 + 2 * m * m + 2 * n * n
}

pub fn other_input_dim(m: usize, n: usize) -> usize {
    6 + 2 * m * m + 2 * n * n
}

pub fn output_dim(n: usize) -> usize {
    6 + 2 * n
}

impl CenDims {
    /// Default widths (`L = 4`, `d_h = 128`, `F = 64`) for `M` transmit and
    /// `N` receive elements.
    pub fn for_arrays(m: usize, n: usize) -> Self {
        Self { d_in: centralized_input_dim(m, n), d_h: 128, f: 64, g: output_dim(n), layers: 4 }
    }

    fn words(&self) -> Vec<u32> {
        [self.d_in, self.d_h, self.f, self.g, self.layers].iter().map(|&v| v as u32).collect()
    }
}

impl DecDims {
    /// Default widths (`L = 4`, `d_h = 96`, `F = 64`, 4 heads).
    pub fn for_arrays(m: usize, n: usize) -> Self {
        Self {
            d_loc: centralized_input_dim(m, n),
            d_oth: other_input_dim(m, n),
            d_h_loc: 96,
            d_h_oth: 96,
            f_loc: 64,
            f_oth: 64,
            g: output_dim(n),
            layers: 4,
            heads: 4,
        }
    }

    fn words(&self) -> Vec<u32> {
        [
            self.d_loc,
            self.d_oth,
            self.d_h_loc,
            self.d_h_oth,
            self.f_loc,
            self.f_oth,
            self.g,
            self.layers,
            self.heads,
        ]
        .iter()
        .map(|&v| v as u32)
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Centralized(CenDims),
    Decentralized(DecDims),
}

impl Dims {
    pub fn arch(&self) -> Arch {
        match self {
            Dims::Centralized(_) => Arch::Centralized,
            Dims::Decentralized(_) => Arch::Decentralized,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            Dims::Centralized(d) => {
                if d.d_in == 0 || d.d_h == 0 || d.f == 0 || d.g < 8 || (d.g - 6) % 2 != 0 {
                    return bad(format!("invalid centralized dims {d:?}"));
                }
            }
            Dims::Decentralized(d) => {
                if d.d_loc == 0 || d.d_oth == 0 || d.d_h_loc == 0 || d.d_h_oth == 0 || d.f_loc == 0 {
                    return bad(format!("invalid decentralized dims {d:?}"));
                }
                if d.g < 8 || (d.g - 6) % 2 != 0 {
                    return bad(format!("output width {} is not 6 + 2N", d.g));
                }
                if d.heads == 0 || d.f_oth == 0 || d.f_oth % d.heads != 0 {
                    return bad(format!("F_oth = {} is not divisible by {} heads", d.f_oth, d.heads));
                }
            }
        }
        Ok(())
    }

    /// Checks the widths against a scenario's array sizes.
    pub fn check_scenario(&self, m: usize, n: usize) -> Result<()> {
        let (d_in, g) = match self {
            Dims::Centralized(d) => (d.d_in, d.g),
            Dims::Decentralized(d) => {
                if d.d_oth != other_input_dim(m, n) {
                    return Err(Error::ShapeMismatch(format!(
                        "weights expect D_oth = {}, scenario with M={m}, N={n} gives {}",
                        d.d_oth,
                        other_input_dim(m, n)
                    )));
                }
                (d.d_loc, d.g)
            }
        };
        if d_in != centralized_input_dim(m, n) || g != output_dim(n) {
            return Err(Error::ShapeMismatch(format!(
                "weights expect D = {d_in}, G = {g}; scenario with M={m}, N={n} gives D = {}, G = {}",
                centralized_input_dim(m, n),
                output_dim(n)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Default)]
struct ShapeList(Vec<(String, Vec<usize>)>);

impl ShapeList {
    fn linear(&mut self, name: &str, din: usize, dout: usize) {
        self.0.push((format!("{name}.weight"), vec![din, dout]));
        self.0.push((format!("{name}.bias"), vec![dout]));
    }

    fn vector(&mut self, name: &str, len: usize) {
        self.0.push((name.to_string(), vec![len]));
    }

    fn ten(&mut self, p: &str, din: usize, dh: usize, f: usize, layers: usize, patterns: usize) {
        self.linear(&format!("{p}.in"), din, dh);
        for l in 0..layers {
            for j in 0..patterns {
                self.linear(&format!("{p}.block{l}.mde.p{j}"), dh, dh);
            }
            self.vector(&format!("{p}.block{l}.ln.gamma"), dh);
            self.vector(&format!("{p}.block{l}.ln.beta"), dh);
        }
        self.linear(&format!("{p}.out"), dh, f);
    }

    fn fda(&mut self, fin: usize, g: usize) {
        self.vector("fda.ln.gamma", fin);
        self.vector("fda.ln.beta", fin);
        self.linear("fda.fc1", fin, g);
        self.linear("fda.fc2", g, g);
    }
}

/// Every named parameter with its expected shape, in container order.
pub fn expected_shapes(dims: &Dims) -> Vec<(String, Vec<usize>)> {
    let mut out = ShapeList::default();
    match dims {
        Dims::Centralized(d) => {
            out.ten("ten", d.d_in, d.d_h, d.f, d.layers, 4);
            out.fda(d.f, d.g);
        }
        Dims::Decentralized(d) => {
            out.ten("loc", d.d_loc, d.d_h_loc, d.f_loc, d.layers, 2);
            out.ten("oth", d.d_oth, d.d_h_oth, d.f_oth, d.layers, 4);
            out.vector("pma.seed", d.f_oth);
            for p in ["q", "k", "v", "o"] {
                out.linear(&format!("pma.{p}"), d.f_oth, d.f_oth);
            }
            out.fda(d.f_loc + d.f_oth, d.g);
        }
    }
    out.0
}

/// Weights of one network, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EquiWeights {
    pub dims: Dims,
    tensors: BTreeMap<String, Param>,
}

/// Borrowed affine map `x ↦ xW + b` with row-major `W` of shape `din × dout`.
#[derive(Clone, Copy)]
pub struct LinearRef<'a> {
    pub w: &'a [f32],
    pub b: &'a [f32],
    pub din: usize,
    pub dout: usize,
}

impl LinearRef<'_> {
    fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(self.b) {
            *o = *b as f64;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.dout..(i + 1) * self.dout];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w as f64;
            }
        }
    }

    pub fn apply(&self, x: &Tensor3, tally: &mut OpTally) -> Result<Tensor3> {
        if x.d != self.din {
            return Err(Error::ShapeMismatch(format!("linear layer expects width {}, got {}", self.din, x.d)));
        }
        let mut out = Tensor3::zeros(x.a, x.b, self.dout);
        for r in 0..x.rows() {
            let (src, dst) = (&x.data[r * x.d..(r + 1) * x.d], &mut out.data[r * self.dout..(r + 1) * self.dout]);
            self.apply_row(src, dst);
        }
        tally.mac(x.rows() * self.din * self.dout);
        tally.elem(x.rows() * self.dout);
        Ok(out)
    }
}

impl EquiWeights {
    pub fn new(dims: Dims, tensors: BTreeMap<String, Param>) -> Result<Self> {
        let w = Self { dims, tensors };
        w.validate()?;
        Ok(w)
    }

    pub fn arch(&self) -> Arch {
        self.dims.arch()
    }

    pub fn tensors(&self) -> &BTreeMap<String, Param> {
        &self.tensors
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let expected = expected_shapes(&self.dims);
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::ShapeMismatch(format!("missing tensor {name}"))),
                Some(p) if &p.shape != shape => {
                    return Err(Error::ShapeMismatch(format!("tensor {name} has shape {:?}, expected {shape:?}", p.shape)))
                }
                Some(p) if p.data.len() != shape.iter().product::<usize>() => {
                    return Err(Error::ShapeMismatch(format!("tensor {name} payload length {}", p.data.len())))
                }
                Some(p) if p.data.iter().any(|v| !v.is_finite()) => {
                    return Err(Error::InvalidConfig(format!("tensor {name} holds non-finite values")))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != expected.len() {
            let extra: Vec<&String> = self.tensors.keys().filter(|k| !expected.iter().any(|(n, _)| n == *k)).collect();
            return Err(Error::ShapeMismatch(format!("unexpected tensors {extra:?}")));
        }
        Ok(())
    }

    /// Random fixture: uniform weights in `±1/√fan_in`, small random biases,
    /// LN scales near one.
    pub fn random(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in expected_shapes(&dims) {
            let len: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("gamma") {
                (0..len).map(|_| rng.random_range(0.8f32..1.2)).collect()
            } else if name.ends_with("beta") || name.ends_with("bias") {
                (0..len).map(|_| rng.random_range(-0.1f32..0.1)).collect()
            } else {
                let bound = 1.0 / (shape[0] as f32).sqrt();
                (0..len).map(|_| rng.random_range(-bound..bound)).collect()
            };
            tensors.insert(name, Param { shape, data });
        }
        Self::new(dims, tensors)
    }

    fn vector(&self, name: &str) -> &[f32] {
        &self.tensors[name].data
    }

    pub fn linear(&self, name: &str) -> Result<LinearRef<'_>> {
        let w = self
            .tensors
            .get(&format!("{name}.weight"))
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}.weight")))?;
        let b = self
            .tensors
            .get(&format!("{name}.bias"))
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}.bias")))?;
        Ok(LinearRef { w: &w.data, b: &b.data, din: w.shape[0], dout: w.shape[1] })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.arch().tag());
        let words = match &self.dims {
            Dims::Centralized(d) => d.words(),
            Dims::Decentralized(d) => d.words(),
        };
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for (name, _) in expected_shapes(&self.dims) {
            let p = &self.tensors[&name];
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(p.shape.len() as u8);
            for &s in &p.shape {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a container; `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "bad magic, not an EQWT container"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(origin, format!("unsupported format version {version}")));
        }
        let dims = match r.u8()? {
            0 => {
                let v: Vec<usize> = (0..5).map(|_| r.u32().map(|x| x as usize)).collect::<Result<_>>()?;
                Dims::Centralized(CenDims { d_in: v[0], d_h: v[1], f: v[2], g: v[3], layers: v[4] })
            }
            1 => {
                let v: Vec<usize> = (0..9).map(|_| r.u32().map(|x| x as usize)).collect::<Result<_>>()?;
                Dims::Decentralized(DecDims {
                    d_loc: v[0],
                    d_oth: v[1],
                    d_h_loc: v[2],
                    d_h_oth: v[3],
                    f_loc: v[4],
                    f_oth: v[5],
                    g: v[6],
                    layers: v[7],
                    heads: v[8],
                })
            }
            t => return Err(Error::format(origin, format!("unknown architecture tag {t}"))),
        };
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|x| x as usize)).collect::<Result<_>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 4).map_err(|_| Error::format(origin, format!("tensor {name}: truncated payload")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if tensors.insert(name.clone(), Param { shape, data }).is_some() {
                return Err(Error::format(origin, format!("duplicate tensor {name}")));
            }
        }
        Self::new(dims, tensors).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Human-readable listing of the container.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format EQWT v{FORMAT_VERSION}");
        let _ = writeln!(s, "arch {}", self.arch().name());
        let _ = writeln!(s, "dims {:?}", self.dims);
        for (name, shape) in expected_shapes(&self.dims) {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "{name}\t{}", dims.join("x"));
        }
        s
    }

    /// Writes the container and its manifest (`<path>.manifest`).
    pub fn save_with_manifest(&self, path: &Path) -> Result<()> {
        self.save(path)?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, self.manifest()).map_err(|e| Error::io(mpath.display().to_string(), e))
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    s.into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, format!("unexpected end of file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Network inputs for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensors {
    /// `S × K × 6`: `[φ_sat, θ_sat, φ_ut, θ_ut, σ², P]`, angles in radians,
    /// `P` in watts.
    pub a: Tensor3,
    /// `S × K × 2(N² + M²)`: `vec(Re R^ut), vec(Im R^ut), vec(Re R^sat), vec(Im R^sat)`.
    pub r: Tensor3,
    /// `S × K × 2`: `[β, κ]`.
    pub b: Tensor3,
    /// `S × K × 2(N² + M²)`: the same layout over `d0 d0ᴴ` and `g gᴴ`.
    pub u: Tensor3,
}

/// Inputs of the decentralized network at one satellite.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInputs {
    /// `1 × K × D_loc`.
    pub x_loc: Tensor3,
    /// `(S−1) × K × D_oth`, other satellites in ascending index order.
    pub x_oth: Tensor3,
}

fn push_vec_re_im(out: &mut Vec<f64>, m: &CMat) {
    out.extend(m.iter().map(|z| z.re));
    out.extend(m.iter().map(|z| z.im));
}

pub fn build_inputs(scn: &ScenarioInstance) -> InputTensors {
    let (ns, nk) = (scn.num_sats, scn.num_uts);
    let width = 2 * (scn.m() * scn.m() + scn.n() * scn.n());
    let mut a = Tensor3::zeros(ns, nk, 6);
    let mut r = Tensor3::zeros(ns, nk, width);
    let mut b = Tensor3::zeros(ns, nk, 2);
    let mut u = Tensor3::zeros(ns, nk, width);
    for s in 0..ns {
        for k in 0..nk {
            let l = scn.link(s, k);
            a.at_mut(s, k).copy_from_slice(&[
                l.phi_sat(),
                l.theta_sat(),
                l.phi_ut(),
                l.theta_ut(),
                scn.noise[k],
                scn.budget_w(s),
            ]);
            let mut row = Vec::with_capacity(width);
            push_vec_re_im(&mut row, &l.r_ut);
            push_vec_re_im(&mut row, &l.r_sat);
            r.at_mut(s, k).copy_from_slice(&row);
            b.at_mut(s, k).copy_from_slice(&[l.beta, l.kappa]);
            row.clear();
            push_vec_re_im(&mut row, &outer(&l.d0, &l.d0));
            push_vec_re_im(&mut row, &outer(&l.g, &l.g));
            u.at_mut(s, k).copy_from_slice(&row);
        }
    }
    InputTensors { a, r, b, u }
}

impl InputTensors {
    /// `[A, R, B]` along the feature dimension.
    pub fn centralized(&self) -> Tensor3 {
        Tensor3::concat(&[&self.a, &self.r, &self.b]).expect("inputs share leading dimensions")
    }

    pub fn local(&self, s: usize) -> LocalInputs {
        let cen = self.centralized();
        let x_loc = cen.slice_a(s);
        let oth = Tensor3::concat(&[&self.a, &self.u]).expect("inputs share leading dimensions");
        let others: Vec<usize> = (0..self.a.a).filter(|&t| t != s).collect();
        let mut x_oth = Tensor3::zeros(others.len(), oth.b, oth.d);
        for (i, &t) in others.iter().enumerate() {
            for k in 0..oth.b {
                x_oth.at_mut(i, k).copy_from_slice(oth.at(t, k));
            }
        }
        LocalInputs { x_loc, x_oth }
    }
}

/// Mean-and-repeat equivariant layer: `Σ_j Linear_j(pool_j(x))`, broadcast
/// back to the input shape. Patterns for `e = 2`: identity, mean over dim 1,
/// mean over dim 2, mean over both. For `e = 1` (tensors with `a = 1`):
/// identity and mean over dim 2.
pub fn mde_forward(x: &Tensor3, e: usize, patterns: &[LinearRef<'_>], tally: &mut OpTally) -> Result<Tensor3> {
    let pools: &[(bool, bool)] = match e {
        1 => &[(false, false), (false, true)],
        2 => &[(false, false), (true, false), (false, true), (true, true)],
        _ => return Err(Error::ShapeMismatch(format!("equivariant order {e} not supported"))),
    };
    if patterns.len() != pools.len() {
        return Err(Error::ShapeMismatch(format!("order-{e} layer needs {} patterns", pools.len())));
    }
    if e == 1 && x.a != 1 {
        return Err(Error::ShapeMismatch("order-1 layer expects a = 1".into()));
    }
    let dout = patterns[0].dout;
    let mut out = Tensor3::zeros(x.a, x.b, dout);
    for (lin, &(over_a, over_b)) in patterns.iter().zip(pools) {
        let pooled = if over_a || over_b {
            tally.elem(x.rows() * x.d);
            x.mean_over(over_a, over_b)
        } else {
            x.clone()
        };
        let y = lin.apply(&pooled, tally)?;
        for i in 0..x.a {
            for j in 0..x.b {
                let src = y.at(if over_a { 0 } else { i }, if over_b { 0 } else { j }).to_vec();
                for (o, v) in out.at_mut(i, j).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        tally.elem(x.rows() * dout);
    }
    Ok(out)
}

fn relu(x: &mut Tensor3, tally: &mut OpTally) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    tally.elem(x.data.len());
}

/// Layer normalization over the feature dimension.
pub fn layer_norm(x: &Tensor3, gamma: &[f32], beta: &[f32], tally: &mut OpTally) -> Result<Tensor3> {
    if gamma.len() != x.d || beta.len() != x.d {
        return Err(Error::ShapeMismatch(format!("layer norm of width {} on features of width {}", gamma.len(), x.d)));
    }
    let mut out = x.clone();
    let d = x.d as f64;
    for row in out.data.chunks_exact_mut(x.d) {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * *g as f64 + *b as f64;
        }
    }
    tally.elem(5 * x.data.len());
    tally.trans(x.rows());
    Ok(out)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `Linear → L × (MDE → ReLU → LN) → Linear` with parameters under `prefix`.
pub fn ten_forward(x: &Tensor3, w: &EquiWeights, prefix: &str, e: usize, tally: &mut OpTally) -> Result<Tensor3> {
    let (layers, patterns) = match (&w.dims, prefix) {
        (Dims::Centralized(d), "ten") => (d.layers, 4),
        (Dims::Decentralized(d), "loc") => (d.layers, 2),
        (Dims::Decentralized(d), "oth") => (d.layers, 4),
        _ => return Err(Error::ShapeMismatch(format!("no TEN branch {prefix} in {} weights", w.arch().name()))),
    };
    let mut h = w.linear(&format!("{prefix}.in"))?.apply(x, tally)?;
    for l in 0..layers {
        let lins: Vec<LinearRef<'_>> =
            (0..patterns).map(|j| w.linear(&format!("{prefix}.block{l}.mde.p{j}"))).collect::<Result<_>>()?;
        let mut y = mde_forward(&h, e, &lins, tally)?;
        relu(&mut y, tally);
        h = layer_norm(&y, w.vector(&format!("{prefix}.block{l}.ln.gamma")), w.vector(&format!("{prefix}.block{l}.ln.beta")), tally)?;
    }
    w.linear(&format!("{prefix}.out"))?.apply(&h, tally)
}

/// `LN → Linear → GELU → Linear` (dropout is the identity at inference).
pub fn fda_forward(t: &Tensor3, w: &EquiWeights, tally: &mut OpTally) -> Result<Tensor3> {
    let h = layer_norm(t, w.vector("fda.ln.gamma"), w.vector("fda.ln.beta"), tally)?;
    let mut h = w.linear("fda.fc1")?.apply(&h, tally)?;
    h.data.iter_mut().for_each(|v| *v = gelu(*v));
    tally.trans(h.data.len());
    w.linear("fda.fc2")?.apply(&h, tally)
}

/// Multi-head attention pooling of an `(S−1) × K × F` tensor over its first
/// dimension with a learned seed query. An empty first dimension pools to
/// zeros.
pub fn pma_pool(x: &Tensor3, w: &EquiWeights, tally: &mut OpTally) -> Result<Tensor3> {
    let Dims::Decentralized(d) = &w.dims else {
        return Err(Error::ArchMismatch { expected: "decentralized".into(), found: w.arch().name().into() });
    };
    let f = d.f_oth;
    if x.d != f {
        return Err(Error::ShapeMismatch(format!("pooling expects width {f}, got {}", x.d)));
    }
    let mut out = Tensor3::zeros(1, x.b, f);
    if x.a == 0 {
        return Ok(out);
    }
    let seed: Vec<f64> = w.vector("pma.seed").iter().map(|&v| v as f64).collect();
    let mut q = vec![0.0; f];
    w.linear("pma.q")?.apply_row(&seed, &mut q);
    tally.mac(f * f);
    let keys = w.linear("pma.k")?.apply(x, tally)?;
    let vals = w.linear("pma.v")?.apply(x, tally)?;
    let heads = d.heads;
    let dh = f / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let wo = w.linear("pma.o")?;
    let mut pooled = vec![0.0; f];
    for k in 0..x.b {
        pooled.iter_mut().for_each(|v| *v = 0.0);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let scores: Vec<f64> = (0..x.a)
                .map(|j| keys.at(j, k)[cols.clone()].iter().zip(&q[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = ex.iter().sum();
            for (j, e) in ex.iter().enumerate() {
                let wgt = e / z;
                for (p, v) in pooled[cols.clone()].iter_mut().zip(&vals.at(j, k)[cols.clone()]) {
                    *p += wgt * v;
                }
            }
        }
        wo.apply_row(&pooled, out.at_mut(0, k));
    }
    tally.mac(x.b * (2 * x.a * f + f * f));
    tally.trans(x.b * heads * x.a);
    tally.elem(x.b * heads * x.a * 3);
    Ok(out)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Decodes an `S × K × G` head output into the tuple. Channel order per
/// `(s, k)`: `[w, Re u, Im u, λ, Re ϱ, Im ϱ, Re b (N), Im b (N)]`.
pub fn cfr_decode(c: &Tensor3, n: usize) -> Result<PredictedTuple> {
    if c.d != output_dim(n) {
        return Err(Error::ShapeMismatch(format!("head output width {} is not 6 + 2N = {}", c.d, output_dim(n))));
    }
    let (ns, nk) = (c.a, c.b);
    let mut t = PredictedTuple {
        num_sats: ns,
        num_uts: nk,
        w: Vec::with_capacity(ns * nk),
        u: Vec::with_capacity(ns * nk),
        lambda: Vec::with_capacity(ns),
        rho: Vec::with_capacity(ns * nk),
        b: Vec::with_capacity(ns * nk),
    };
    for s in 0..ns {
        let mut lam = 0.0;
        for k in 0..nk {
            let v = c.at(s, k);
            t.w.push(softplus(v[0]) + W_FLOOR);
            t.u.push(C64::new(v[1], v[2]));
            lam += v[3];
            t.rho.push(C64::new(v[4], v[5]));
            t.b.push(CVec::from_fn(n, |i, _| C64::new(v[6 + i], v[6 + n + i])));
        }
        t.lambda.push(softplus(lam / nk as f64) + LAMBDA_FLOOR);
    }
    Ok(t)
}

/// Inverse of [`cfr_decode`]. Values below the decode floors are clamped to
/// just above them.
pub fn cfr_encode(t: &PredictedTuple) -> Tensor3 {
    let n = t.b.first().map_or(0, |b| b.len());
    let mut c = Tensor3::zeros(t.num_sats, t.num_uts, output_dim(n));
    for s in 0..t.num_sats {
        let lam = softplus_inv((t.lambda[s] - LAMBDA_FLOOR).max(f64::MIN_POSITIVE));
        for k in 0..t.num_uts {
            let i = s * t.num_uts + k;
            let row = c.at_mut(s, k);
            row[0] = softplus_inv((t.w[i] - W_FLOOR).max(f64::MIN_POSITIVE));
            row[1] = t.u[i].re;
            row[2] = t.u[i].im;
            row[3] = lam;
            row[4] = t.rho[i].re;
            row[5] = t.rho[i].im;
            for j in 0..n {
                row[6 + j] = t.b[i][j].re;
                row[6 + n + j] = t.b[i][j].im;
            }
        }
    }
    c
}

fn require(w: &EquiWeights, arch: Arch, scn: &ScenarioInstance) -> Result<()> {
    if w.arch() != arch {
        return Err(Error::ArchMismatch { expected: arch.name().into(), found: w.arch().name().into() });
    }
    scn.validate()?;
    w.dims.check_scenario(scn.m(), scn.n())
}

/// Centralized inference; also returns the operation tally.
pub fn infer_centralized_counted(scn: &ScenarioInstance, w: &EquiWeights) -> Result<(PredictedTuple, OpTally)> {
    require(w, Arch::Centralized, scn)?;
    let mut tally = OpTally::default();
    let x = build_inputs(scn).centralized();
    let t = ten_forward(&x, w, "ten", 2, &mut tally)?;
    let c = fda_forward(&t, w, &mut tally)?;
    tally.trans(c.rows() * 2);
    Ok((cfr_decode(&c, scn.n())?, tally))
}

pub fn infer_centralized(scn: &ScenarioInstance, w: &EquiWeights) -> Result<PredictedTuple> {
    infer_centralized_counted(scn, w).map(|(t, _)| t)
}

/// Head output of the decentralized network at satellite `s` (`1 × K × G`).
pub fn decentralized_head(inputs: &LocalInputs, w: &EquiWeights, tally: &mut OpTally) -> Result<Tensor3> {
    let t_loc = ten_forward(&inputs.x_loc, w, "loc", 1, tally)?;
    let t_oth = if inputs.x_oth.a == 0 {
        let Dims::Decentralized(d) = &w.dims else { unreachable!() };
        Tensor3::zeros(1, inputs.x_loc.b, d.f_oth)
    } else {
        let t = ten_forward(&inputs.x_oth, w, "oth", 2, tally)?;
        pma_pool(&t, w, tally)?
    };
    let fused = Tensor3::concat(&[&t_loc, &t_oth])?;
    fda_forward(&fused, w, tally)
}

/// Decentralized inference at satellite `s`: a single-satellite tuple
/// (`num_sats = 1`) built only from `s`'s local statistics and the other
/// satellites' state information.
pub fn infer_decentralized_counted(scn: &ScenarioInstance, w: &EquiWeights, s: usize) -> Result<(PredictedTuple, OpTally)> {
    require(w, Arch::Decentralized, scn)?;
    if s >= scn.num_sats {
        return Err(Error::InvalidConfig(format!("satellite index {s} out of range")));
    }
    let mut tally = OpTally::default();
    let inputs = build_inputs(scn).local(s);
    let c = decentralized_head(&inputs, w, &mut tally)?;
    tally.trans(c.rows() * 2);
    Ok((cfr_decode(&c, scn.n())?, tally))
}

pub fn infer_decentralized(scn: &ScenarioInstance, w: &EquiWeights, s: usize) -> Result<PredictedTuple> {
    infer_decentralized_counted(scn, w, s).map(|(t, _)| t)
}

/// Runs every satellite's decentralized inference (in parallel under
/// `exec`) and stacks the slices into a full tuple.
pub fn infer_decentralized_all(scn: &ScenarioInstance, w: &EquiWeights, exec: Execution) -> Result<PredictedTuple> {
    let slices = exec.map(scn.num_sats, |s| infer_decentralized(scn, w, s));
    let mut out = PredictedTuple {
        num_sats: scn.num_sats,
        num_uts: scn.num_uts,
        w: Vec::new(),
        u: Vec::new(),
        lambda: Vec::new(),
        rho: Vec::new(),
        b: Vec::new(),
    };
    for slice in slices {
        let t = slice?;
        out.w.extend(t.w);
        out.u.extend(t.u);
        out.lambda.extend(t.lambda);
        out.rho.extend(t.rho);
        out.b.extend(t.b);
    }
    Ok(out)
}
