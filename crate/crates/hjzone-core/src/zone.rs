//! Zone artifact: cached value function, point classification, the circular
//! stopping-distance baseline, and 2-D slice extraction.
//!
//! Binary layout (little-endian throughout):
//!
//! ```text
//! magic            8 bytes   "HJZONE01"
//! version          u32
//! param length     u32
//! param block      UTF-8 JSON (the ArtifactMeta)
//! param digest     32 bytes  sha256 of the param block
//! axis table       5 x (lo f64, hi f64, count u32, periodic u8)
//! field payload    num_nodes x f32, axis-major
//! tube flag        u8 (0 or 1)
//! [tube]           count u32, count x time f64, count x payload
//! footer           32 bytes  sha256 of everything above
//! ```
//!
//! The param digest pins provenance (which inputs produced this field); the
//! footer catches payload corruption. Both are checked on load.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{to_relative, VehicleGeometry, VehicleState};
use crate::grid::{GridError, GridSpec, ScalarField, NUM_AXES};
use crate::params::Params;
use crate::solver::{SolveOptions, TwoPhaseSolution, ValueFunction};

const MAGIC: &[u8; 8] = b"HJZONE01";
const VERSION: u32 = 1;
/// Sanity cap on the parameter block; real blocks are under a kilobyte.
const MAX_PARAM_LEN: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum ZoneError {
    #[error("bad magic; not a zone artifact")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    BadVersion(u32),
    #[error("parameter block digest mismatch")]
    ParamDigest,
    #[error("file checksum mismatch; payload corrupt")]
    Checksum,
    #[error("artifact truncated")]
    Truncated,
    #[error("parameter block length {0} implausible")]
    BadParamLen(u32),
    #[error("axis table disagrees with the parameter block's grid")]
    GridDisagreement,
    #[error("stored braking tube invalid: {0}")]
    BadTube(String),
    #[error("field does not match the artifact grid")]
    FieldMismatch,
    #[error("parameter block: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything needed to reproduce or audit the solve, stored as structured
/// text inside the artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub params: Params,
    pub grid: GridSpec,
    /// Scheme identifier for humans reading the block.
    pub scheme: String,
    pub cfl: f64,
    pub checkpoint_interval: f64,
    pub dissipation_override: Option<[f64; NUM_AXES]>,
    pub braking_horizon: f64,
    pub reaction_horizon: f64,
}

/// Cached safety-zone field plus the parameters that produced it. Immutable
/// after construction; classification and slicing are read-only.
#[derive(Debug, Clone)]
pub struct ZoneArtifact {
    meta: ArtifactMeta,
    field: ScalarField,
    braking: Option<ValueFunction>,
}

/// Verdict for one ego/contender pose pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub safety_critical: bool,
    /// Interpolated zone value in meters; +inf when out of domain.
    pub value: f64,
    /// False when the relative position left the grid; the verdict is then
    /// non-critical by the domain-sizing argument.
    pub in_domain: bool,
    /// The circular stopping-distance comparator's verdict.
    pub baseline_critical: bool,
}

impl ZoneArtifact {
    pub fn new(
        meta: ArtifactMeta,
        field: ScalarField,
        braking: Option<ValueFunction>,
    ) -> Result<Self, ZoneError> {
        let grid = meta.grid.clone().after_deserialize()?;
        if field.spec() != &grid {
            return Err(ZoneError::FieldMismatch);
        }
        if let Some(tube) = &braking {
            if tube.spec() != &grid {
                return Err(ZoneError::FieldMismatch);
            }
        }
        let meta = ArtifactMeta { grid, ..meta };
        Ok(ZoneArtifact { meta, field, braking })
    }

    /// Packages a finished solve. `keep_tube` stores every braking checkpoint
    /// (large: checkpoints x field size); the classifier only needs the final
    /// field.
    pub fn from_solution(
        params: &Params,
        opts: &SolveOptions,
        solution: TwoPhaseSolution,
        keep_tube: bool,
    ) -> Result<Self, ZoneError> {
        let braking_horizon = -solution.braking.times().last().copied().unwrap_or(0.0);
        let scheme = if opts.dissipation_override.is_some() {
            "freeze-fixed-lax-friedrichs"
        } else {
            "freeze-upwind-godunov"
        };
        let meta = ArtifactMeta {
            params: params.clone(),
            grid: solution.braking.spec().clone(),
            scheme: scheme.to_string(),
            cfl: opts.cfl,
            checkpoint_interval: opts.checkpoint_interval,
            dissipation_override: opts.dissipation_override,
            braking_horizon,
            reaction_horizon: params.reaction_time,
        };
        let field = solution.reaction.final_field().clone();
        let braking = keep_tube.then_some(solution.braking);
        ZoneArtifact::new(meta, field, braking)
    }

    pub fn meta(&self) -> &ArtifactMeta {
        &self.meta
    }

    pub fn params(&self) -> &Params {
        &self.meta.params
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn braking(&self) -> Option<&ValueFunction> {
        self.braking.as_ref()
    }

    /// Margin preset that absorbs one cell of first-order scheme error: the
    /// terminal field has unit gradient, so one position-cell diagonal bounds
    /// the value change across any single cell.
    pub fn conservative_margin(&self) -> f64 {
        self.field.spec().position_cell_diagonal()
    }

    /// Classifies with the margin stored in the parameters.
    pub fn classify(&self, ego: &VehicleState, contender: &VehicleState) -> Classification {
        self.classify_with_margin(ego, contender, self.meta.params.classification_margin)
    }

    /// Safety-critical iff the interpolated value falls below `margin`.
    /// Speeds clamp into the grid's speed extents, the heading wraps, and
    /// positions outside the grid return the non-critical out-of-domain
    /// verdict: the grid is sized past the worst-case closing displacement,
    /// so such states cannot reach contact before the ego stands still.
    pub fn classify_with_margin(
        &self,
        ego: &VehicleState,
        contender: &VehicleState,
        margin: f64,
    ) -> Classification {
        let baseline_critical = circular_baseline(ego, contender, &self.meta.params);
        let z = to_relative(ego, contender);
        let spec = self.field.spec();
        let in_domain = z.x_rel >= spec.lo()[0]
            && z.x_rel <= spec.hi()[0]
            && z.y_rel >= spec.lo()[1]
            && z.y_rel <= spec.hi()[1];
        if !in_domain {
            return Classification {
                safety_critical: false,
                value: f64::INFINITY,
                in_domain: false,
                baseline_critical,
            };
        }
        let query = [
            z.x_rel,
            z.y_rel,
            z.psi_rel,
            z.v_ego.clamp(spec.lo()[3], spec.hi()[3]),
            z.v_contender.clamp(spec.lo()[4], spec.hi()[4]),
        ];
        let value = self
            .field
            .interpolate(&query)
            .expect("query clamped and wrapped into the grid domain");
        Classification {
            safety_critical: value < margin,
            value,
            in_domain: true,
            baseline_critical,
        }
    }

    pub fn save(&self, path: &Path) -> Result<u64, ZoneError> {
        let mut w = HashingWriter::new(BufWriter::new(File::create(path)?));
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let json = serde_json::to_vec_pretty(&self.meta)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&Sha256::digest(&json))?;
        let spec = self.field.spec();
        for axis in 0..NUM_AXES {
            w.write_all(&spec.lo()[axis].to_le_bytes())?;
            w.write_all(&spec.hi()[axis].to_le_bytes())?;
            w.write_all(&(spec.count()[axis] as u32).to_le_bytes())?;
            w.write_all(&[spec.periodic(axis) as u8])?;
        }
        write_payload(&mut w, self.field.data())?;
        match &self.braking {
            None => w.write_all(&[0u8])?,
            Some(tube) => {
                w.write_all(&[1u8])?;
                w.write_all(&(tube.len() as u32).to_le_bytes())?;
                for &t in tube.times() {
                    w.write_all(&t.to_le_bytes())?;
                }
                for k in 0..tube.len() {
                    write_payload(&mut w, tube.checkpoint(k).data())?;
                }
            }
        }
        let (digest, mut inner) = w.finish();
        inner.write_all(&digest)?;
        inner.flush()?;
        Ok(inner.get_ref().metadata()?.len())
    }

    pub fn load(path: &Path) -> Result<Self, ZoneError> {
        let mut r = HashingReader::new(BufReader::new(File::open(path)?));
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ZoneError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ZoneError::BadVersion(version));
        }
        let param_len = read_u32(&mut r)?;
        if param_len > MAX_PARAM_LEN {
            return Err(ZoneError::BadParamLen(param_len));
        }
        let mut json = vec![0u8; param_len as usize];
        read_exact(&mut r, &mut json)?;
        let mut digest = [0u8; 32];
        read_exact(&mut r, &mut digest)?;
        if Sha256::digest(&json).as_slice() != digest {
            return Err(ZoneError::ParamDigest);
        }
        let meta: ArtifactMeta = serde_json::from_slice(&json)?;

        let mut lo = [0f64; NUM_AXES];
        let mut hi = [0f64; NUM_AXES];
        let mut count = [0usize; NUM_AXES];
        let mut periodic = [false; NUM_AXES];
        for axis in 0..NUM_AXES {
            lo[axis] = read_f64(&mut r)?;
            hi[axis] = read_f64(&mut r)?;
            count[axis] = read_u32(&mut r)? as usize;
            let mut flag = [0u8; 1];
            read_exact(&mut r, &mut flag)?;
            periodic[axis] = flag[0] != 0;
        }
        let spec = GridSpec::new(lo, hi, count, periodic)?;
        if spec != meta.grid.clone().after_deserialize()? {
            return Err(ZoneError::GridDisagreement);
        }

        let field = ScalarField::from_vec(&spec, read_payload(&mut r, spec.num_nodes())?)?;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let braking = if flag[0] == 0 {
            None
        } else {
            let n = read_u32(&mut r)? as usize;
            let mut times = Vec::with_capacity(n);
            for _ in 0..n {
                times.push(read_f64(&mut r)?);
            }
            let mut checkpoints = Vec::with_capacity(n);
            for &t in &times {
                let data = read_payload(&mut r, spec.num_nodes())?;
                checkpoints.push((t, ScalarField::from_vec(&spec, data)?));
            }
            Some(
                ValueFunction::from_checkpoints(checkpoints)
                    .map_err(|e| ZoneError::BadTube(e.to_string()))?,
            )
        };

        let (computed, mut inner) = r.finish();
        let mut footer = [0u8; 32];
        match inner.read_exact(&mut footer) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(ZoneError::Truncated)
            }
            Err(e) => return Err(e.into()),
        }
        if computed != footer {
            return Err(ZoneError::Checksum);
        }
        ZoneArtifact::new(meta, field, braking)
    }

    /// Samples the field over (x_rel, y_rel) at fixed heading and speeds and
    /// extracts the zero contour. Sample points sit at cell centers of an
    /// `nx` by `ny` lattice spanning the position extents.
    pub fn slice(
        &self,
        psi_rel: f64,
        v_ego: f64,
        v_contender: f64,
        opts: &SliceOptions,
    ) -> Result<ZoneSlice, ZoneError> {
        let spec = self.field.spec();
        for (axis, v) in [(3usize, v_ego), (4, v_contender)] {
            if !(v >= spec.lo()[axis] && v <= spec.hi()[axis]) {
                return Err(ZoneError::Grid(GridError::OutOfDomain {
                    axis,
                    value: v,
                    lo: spec.lo()[axis],
                    hi: spec.hi()[axis],
                }));
            }
        }
        let nx = opts.nx.max(2);
        let ny = opts.ny.max(2);
        let sample = |axis: usize, n: usize, k: usize| {
            spec.lo()[axis] + (k as f64 + 0.5) * (spec.hi()[axis] - spec.lo()[axis]) / n as f64
        };
        let xs: Vec<f64> = (0..nx).map(|k| sample(0, nx, k)).collect();
        let ys: Vec<f64> = (0..ny).map(|k| sample(1, ny, k)).collect();
        let mut values = Vec::with_capacity(nx * ny);
        for &y in &ys {
            for &x in &xs {
                let v = self
                    .field
                    .interpolate(&[x, y, psi_rel, v_ego, v_contender])
                    .expect("slice samples lie inside the domain");
                values.push(v);
            }
        }
        let contour = zero_contour(&xs, &ys, &values);
        Ok(ZoneSlice { psi_rel, v_ego, v_contender, xs, ys, values, contour })
    }
}

/// SHA-256 of everything written, computed as bytes stream through.
struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        HashingWriter { inner, hasher: Sha256::new() }
    }

    fn finish(self) -> ([u8; 32], W) {
        (self.hasher.finalize().into(), self.inner)
    }
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct HashingReader<R: Read> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> HashingReader<R> {
    fn new(inner: R) -> Self {
        HashingReader { inner, hasher: Sha256::new() }
    }

    fn finish(self) -> ([u8; 32], R) {
        (self.hasher.finalize().into(), self.inner)
    }
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ZoneError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ZoneError::Truncated
        } else {
            ZoneError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, ZoneError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, ZoneError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_payload(w: &mut impl Write, data: &[f32]) -> Result<(), ZoneError> {
    // chunked to keep the intermediate buffer small for multi-GB tubes
    let mut buf = Vec::with_capacity(1 << 16);
    for block in data.chunks(1 << 14) {
        buf.clear();
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_payload(r: &mut impl Read, n: usize) -> Result<Vec<f32>, ZoneError> {
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; 1 << 16];
    let mut left = n * 4;
    while left > 0 {
        let take = left.min(buf.len());
        read_exact(r, &mut buf[..take])?;
        for chunk in buf[..take].chunks_exact(4) {
            out.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        left -= take;
    }
    Ok(out)
}

/// Stopping radius of the circular comparator: reaction travel plus braking
/// distance plus the vehicle diagonal.
pub fn stopping_radius(v_ego: f64, params: &Params) -> f64 {
    let v = v_ego.max(0.0);
    let diag = (params.length * params.length + params.width * params.width).sqrt();
    v * params.reaction_time + v * v / (2.0 * params.brake_accel.abs()) + diag
}

/// Velocity-dependent disk comparator: critical iff the body centers are
/// within the ego's stopping radius (boundary inclusive). Depends only on the
/// center distance and the ego speed.
pub fn circular_baseline(ego: &VehicleState, contender: &VehicleState, params: &Params) -> bool {
    let geom = params.geometry();
    let center = |s: &VehicleState| {
        let (sin_h, cos_h) = s.heading.sin_cos();
        [s.x + geom.center_offset() * cos_h, s.y + geom.center_offset() * sin_h]
    };
    let e = center(ego);
    let c = center(contender);
    let dist = ((e[0] - c[0]).powi(2) + (e[1] - c[1]).powi(2)).sqrt();
    dist <= stopping_radius(ego.speed, params)
}

#[derive(Debug, Clone)]
pub struct SliceOptions {
    pub nx: usize,
    pub ny: usize,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions { nx: 240, ny: 160 }
    }
}

/// 2-D sampling of the zone at fixed heading and speeds. `values` is row
/// major with x fastest: `values[iy * xs.len() + ix]`.
#[derive(Debug, Clone)]
pub struct ZoneSlice {
    pub psi_rel: f64,
    pub v_ego: f64,
    pub v_contender: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
    /// Zero-level polylines in (x, y) coordinates.
    pub contour: Vec<Vec<[f64; 2]>>,
}

impl ZoneSlice {
    pub fn value_at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    /// Largest x coordinate on the zero contour, if any contour exists.
    pub fn max_contour_x(&self) -> Option<f64> {
        self.contour
            .iter()
            .flatten()
            .map(|p| p[0])
            .max_by(|a, b| a.total_cmp(b))
    }
}

/// Marching squares on the sample lattice. Crossing points are computed once
/// per lattice edge, so shared endpoints are bit-identical and segments stitch
/// into polylines exactly.
fn zero_contour(xs: &[f64], ys: &[f64], values: &[f64]) -> Vec<Vec<[f64; 2]>> {
    let nx = xs.len();
    let ny = ys.len();
    let v = |ix: usize, iy: usize| values[iy * nx + ix];
    let inside = |ix: usize, iy: usize| v(ix, iy) < 0.0;
    // crossing on the edge from (ax, ay) to (bx, by); callers only ask when
    // the endpoint signs differ
    let cross = |axi: usize, ayi: usize, bxi: usize, byi: usize| -> [f64; 2] {
        let va = v(axi, ayi);
        let vb = v(bxi, byi);
        let t = va / (va - vb);
        [
            xs[axi] + t * (xs[bxi] - xs[axi]),
            ys[ayi] + t * (ys[byi] - ys[ayi]),
        ]
    };

    let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    // a value of exactly zero at a lattice node puts two edge crossings on the
    // node itself; the resulting zero-length piece carries no geometry and
    // would strand the stitch walk, so drop it
    let mut emit = |a: [f64; 2], b: [f64; 2]| {
        if a != b {
            segments.push((a, b));
        }
    };
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            let mut case = 0u8;
            if inside(ix, iy) {
                case |= 1;
            }
            if inside(ix + 1, iy) {
                case |= 2;
            }
            if inside(ix + 1, iy + 1) {
                case |= 4;
            }
            if inside(ix, iy + 1) {
                case |= 8;
            }
            if case == 0 || case == 15 {
                continue;
            }
            let bottom = || cross(ix, iy, ix + 1, iy);
            let right = || cross(ix + 1, iy, ix + 1, iy + 1);
            let top = || cross(ix, iy + 1, ix + 1, iy + 1);
            let left = || cross(ix, iy, ix, iy + 1);
            match case {
                1 | 14 => emit(left(), bottom()),
                2 | 13 => emit(bottom(), right()),
                4 | 11 => emit(right(), top()),
                8 | 7 => emit(left(), top()),
                3 | 12 => emit(left(), right()),
                6 | 9 => emit(bottom(), top()),
                5 | 10 => {
                    // saddle: split by the cell-center sign
                    let center =
                        (v(ix, iy) + v(ix + 1, iy) + v(ix, iy + 1) + v(ix + 1, iy + 1)) * 0.25;
                    let center_inside = center < 0.0;
                    if (case == 5) == center_inside {
                        emit(left(), bottom());
                        emit(right(), top());
                    } else {
                        emit(bottom(), right());
                        emit(left(), top());
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    stitch(segments)
}

/// Chains undirected segments whose endpoints are bit-equal into polylines.
fn stitch(segments: Vec<([f64; 2], [f64; 2])>) -> Vec<Vec<[f64; 2]>> {
    use std::collections::HashMap;
    let key = |p: [f64; 2]| (p[0].to_bits(), p[1].to_bits());
    // endpoint -> indices of segments touching it
    let mut touch: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (i, (a, b)) in segments.iter().enumerate() {
        touch.entry(key(*a)).or_default().push(i);
        touch.entry(key(*b)).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut line = vec![a, b];
        // extend forward from the tail, then backward from the head
        for end in 0..2 {
            loop {
                let tip = if end == 0 { *line.last().unwrap() } else { line[0] };
                let Some(candidates) = touch.get(&key(tip)) else { break };
                let Some(&next) = candidates.iter().find(|&&i| !used[i]) else {
                    break;
                };
                used[next] = true;
                let (na, nb) = segments[next];
                let other = if key(na) == key(tip) { nb } else { na };
                if end == 0 {
                    line.push(other);
                } else {
                    line.insert(0, other);
                }
            }
        }
        polylines.push(line);
    }
    polylines
}

/// Writes a slice as `x,y,value` rows, x varying fastest.
pub fn write_slice_csv(slice: &ZoneSlice, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "x,y,value")?;
    for (iy, &y) in slice.ys.iter().enumerate() {
        for (ix, &x) in slice.xs.iter().enumerate() {
            writeln!(w, "{x},{y},{}", slice.value_at(ix, iy))?;
        }
    }
    Ok(())
}

/// Renders the zero-sublevel region (merged per-row spans), the zero contour,
/// and an ego-vehicle glyph at the origin.
pub fn write_slice_svg(
    slice: &ZoneSlice,
    geom: &VehicleGeometry,
    w: &mut impl Write,
) -> io::Result<()> {
    let x0 = slice.xs.first().copied().unwrap_or(0.0);
    let x1 = slice.xs.last().copied().unwrap_or(1.0);
    let y0 = slice.ys.first().copied().unwrap_or(0.0);
    let y1 = slice.ys.last().copied().unwrap_or(1.0);
    let width = 900.0f64;
    let scale = width / (x1 - x0);
    let height = (y1 - y0) * scale;
    // world -> svg: y flips
    let sx = |x: f64| (x - x0) * scale;
    let sy = |y: f64| (y1 - y) * scale;

    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.1} {height:.1}\" \
         font-family=\"sans-serif\">"
    )?;
    writeln!(w, "<rect width=\"{width:.1}\" height=\"{height:.1}\" fill=\"white\"/>")?;

    // zone interior: merge consecutive negative samples per row
    let dx = if slice.xs.len() > 1 { slice.xs[1] - slice.xs[0] } else { 1.0 };
    let dy = if slice.ys.len() > 1 { slice.ys[1] - slice.ys[0] } else { 1.0 };
    for (iy, &y) in slice.ys.iter().enumerate() {
        let mut run: Option<(usize, usize)> = None;
        let flush = |run: &mut Option<(usize, usize)>, w: &mut dyn Write| -> io::Result<()> {
            if let Some((a, b)) = run.take() {
                let rx = sx(slice.xs[a] - 0.5 * dx);
                let ry = sy(y + 0.5 * dy);
                let rw = (b - a + 1) as f64 * dx * scale;
                let rh = dy * scale;
                writeln!(
                    w,
                    "<rect x=\"{rx:.2}\" y=\"{ry:.2}\" width=\"{rw:.2}\" height=\"{rh:.2}\" \
                     fill=\"#4878a8\" fill-opacity=\"0.35\"/>"
                )?;
            }
            Ok(())
        };
        for ix in 0..slice.xs.len() {
            if slice.value_at(ix, iy) < 0.0 {
                run = match run {
                    Some((a, _)) => Some((a, ix)),
                    None => Some((ix, ix)),
                };
            } else {
                flush(&mut run, w)?;
            }
        }
        flush(&mut run, w)?;
    }

    for line in &slice.contour {
        let points: Vec<String> =
            line.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
        writeln!(
            w,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f3552\" stroke-width=\"1.5\"/>",
            points.join(" ")
        )?;
    }

    // ego glyph: body rectangle (center offset ahead of the rear axle) plus a
    // heading tick from the state point
    let off = geom.center_offset();
    let gx = sx(off - 0.5 * geom.length);
    let gy = sy(0.5 * geom.width);
    let gw = geom.length * scale;
    let gh = geom.width * scale;
    writeln!(
        w,
        "<rect x=\"{gx:.2}\" y=\"{gy:.2}\" width=\"{gw:.2}\" height=\"{gh:.2}\" \
         fill=\"#c04040\" fill-opacity=\"0.85\"/>"
    )?;
    writeln!(
        w,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#401010\" \
         stroke-width=\"2\"/>",
        sx(0.0),
        sy(0.0),
        sx(off + 0.5 * geom.length),
        sy(0.0)
    )?;
    writeln!(
        w,
        "<text x=\"12\" y=\"22\" font-size=\"16\" fill=\"#222\">psi_rel = {:.3} rad, v_ego = \
         {:.1} m/s, v_contender = {:.1} m/s</text>",
        slice.psi_rel, slice.v_ego, slice.v_contender
    )?;
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminal::terminal_field;
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicU64, Ordering};

    fn temp_path(tag: &str) -> PathBuf {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        std::env::temp_dir().join(format!("hjzone-test-{}-{tag}-{n}.bin", std::process::id()))
    }

    /// Small dense grid whose nodes reach inside the collision set, so the
    /// raw signed-distance field already has a negative region to classify.
    fn near_grid() -> GridSpec {
        use std::f64::consts::PI;
        GridSpec::new(
            [-30.0, -20.0, -PI, 0.0, 0.0],
            [30.0, 20.0, PI, 20.0, 20.0],
            [10, 10, 8, 5, 5],
            [false, false, true, false, false],
        )
        .unwrap()
    }

    fn test_artifact(keep_tube: bool) -> ZoneArtifact {
        let params = Params::default();
        let spec = near_grid();
        let field = terminal_field(&spec, &params.geometry());
        let braking = keep_tube.then(|| {
            let mut older = field.clone();
            for v in older.data_mut() {
                *v -= 1.0;
            }
            ValueFunction::from_checkpoints(vec![(0.0, field.clone()), (-0.5, older)]).unwrap()
        });
        let meta = ArtifactMeta {
            params,
            grid: spec,
            scheme: "freeze-upwind-godunov".to_string(),
            cfl: 0.8,
            checkpoint_interval: 0.1,
            dissipation_override: None,
            braking_horizon: 0.5,
            reaction_horizon: 0.5,
        };
        ZoneArtifact::new(meta, field, braking).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let artifact = test_artifact(true);
        let path = temp_path("roundtrip");
        let bytes = artifact.save(&path).unwrap();
        assert_eq!(bytes, std::fs::metadata(&path).unwrap().len());
        let loaded = ZoneArtifact::load(&path).unwrap();
        assert_eq!(artifact.field().data(), loaded.field().data());
        let (a, b) = (artifact.braking().unwrap(), loaded.braking().unwrap());
        assert_eq!(a.times(), b.times());
        for k in 0..a.len() {
            assert_eq!(a.checkpoint(k).data(), b.checkpoint(k).data());
        }
        assert_eq!(
            serde_json::to_string(&artifact.meta).unwrap(),
            serde_json::to_string(&loaded.meta).unwrap()
        );
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn default_grid_payload_is_28_8_megabytes() {
        let spec = crate::solver::default_grid(&Params::default());
        assert_eq!(spec.num_nodes() * 4, 28_800_000);
    }

    #[test]
    fn corruption_is_detected_distinctly() {
        let artifact = test_artifact(false);
        let path = temp_path("corrupt");
        artifact.save(&path).unwrap();
        let clean = std::fs::read(&path).unwrap();

        // magic
        let mut bad = clean.clone();
        bad[0] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ZoneArtifact::load(&path), Err(ZoneError::BadMagic)));

        // parameter block byte: digest catches it
        let mut bad = clean.clone();
        bad[20] ^= 0x01;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ZoneArtifact::load(&path), Err(ZoneError::ParamDigest)));

        // payload byte: parameter digest passes, footer fails
        let mut bad = clean.clone();
        let payload_at = bad.len() - 40; // inside the field, before the footer
        bad[payload_at] ^= 0x01;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ZoneArtifact::load(&path), Err(ZoneError::Checksum)));

        // truncation
        std::fs::write(&path, &clean[..clean.len() - 7]).unwrap();
        assert!(matches!(ZoneArtifact::load(&path), Err(ZoneError::Truncated)));

        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn coincident_poses_are_critical_and_far_poses_leave_the_domain() {
        let artifact = test_artifact(false);
        let ego = VehicleState { x: 3.0, y: -2.0, heading: 0.7, speed: 5.0 };
        let near = artifact.classify(&ego, &ego);
        assert!(near.safety_critical);
        assert!(near.in_domain);
        assert!(near.value < 0.0);

        let far = VehicleState { x: 3.0 + 300.0, y: -2.0, heading: 0.0, speed: 5.0 };
        let out = artifact.classify(&ego, &far);
        assert!(!out.in_domain);
        assert!(!out.safety_critical);
        assert!(out.value.is_infinite());
    }

    #[test]
    fn raising_the_margin_only_adds_critical_states() {
        let artifact = test_artifact(false);
        let ego = VehicleState { x: 0.0, y: 0.0, heading: 0.0, speed: 10.0 };
        for k in 0..40 {
            let con = VehicleState { x: k as f64, y: 1.5, heading: 2.0, speed: 5.0 };
            let narrow = artifact.classify_with_margin(&ego, &con, 0.0);
            let wide = artifact.classify_with_margin(&ego, &con, 5.0);
            assert!(
                !narrow.safety_critical || wide.safety_critical,
                "margin 0 critical at x = {k} but margin 5 not"
            );
        }
    }

    #[test]
    fn classification_survives_rigid_world_transforms() {
        let artifact = test_artifact(false);
        let ego = VehicleState { x: 1.0, y: 2.0, heading: 0.3, speed: 9.0 };
        let con = VehicleState { x: 14.0, y: -3.0, heading: 2.1, speed: 6.0 };
        let base = artifact.classify(&ego, &con);
        for (shift_x, shift_y, rot) in [(100.0, -40.0, 1.2), (-3.0, 7.0, -2.9), (0.0, 0.0, 3.1)] {
            let apply = |s: &VehicleState| {
                let (sin_r, cos_r) = f64::sin_cos(rot);
                VehicleState {
                    x: cos_r * s.x - sin_r * s.y + shift_x,
                    y: sin_r * s.x + cos_r * s.y + shift_y,
                    heading: s.heading + rot,
                    speed: s.speed,
                }
            };
            let moved = artifact.classify(&apply(&ego), &apply(&con));
            assert!((moved.value - base.value).abs() < 1e-6);
            assert_eq!(moved.safety_critical, base.safety_critical);
        }
    }

    #[test]
    fn stopping_radius_matches_closed_form() {
        let params = Params::default();
        let diag = 26.5f64.sqrt();
        assert!((stopping_radius(0.0, &params) - diag).abs() < 1e-12);
        let want = 2.5 + 25.0 / 7.0 + diag;
        assert!((stopping_radius(5.0, &params) - want).abs() < 1e-12);
        assert!((want - 11.2191).abs() < 1e-3);
    }

    #[test]
    fn baseline_is_radial_and_boundary_inclusive() {
        let params = Params::default();
        let r = stopping_radius(5.0, &params);
        let geom = params.geometry();
        let ego = VehicleState { x: 0.0, y: 0.0, heading: 0.0, speed: 5.0 };
        // place the contender's body center exactly r away from the ego's
        for angle in [0.0, 0.9, 2.2, -2.8] {
            let (sin_a, cos_a) = f64::sin_cos(angle);
            let heading = 1.1 * angle;
            let (sin_h, cos_h) = f64::sin_cos(heading);
            let ex = geom.center_offset();
            let con = VehicleState {
                x: ex + r * cos_a - geom.center_offset() * cos_h,
                y: r * sin_a - geom.center_offset() * sin_h,
                heading,
                speed: 13.0,
            };
            assert!(circular_baseline(&ego, &con, &params), "inclusive at angle {angle}");
            let outside = VehicleState { x: con.x + 0.01 * cos_a, y: con.y + 0.01 * sin_a, ..con };
            assert!(!circular_baseline(&ego, &outside, &params));
        }
    }

    #[test]
    fn slice_matches_direct_interpolation() {
        let artifact = test_artifact(false);
        let slice = artifact
            .slice(0.4, 10.0, 5.0, &SliceOptions { nx: 21, ny: 17 })
            .unwrap();
        for (iy, &y) in slice.ys.iter().enumerate() {
            for (ix, &x) in slice.xs.iter().enumerate() {
                let direct =
                    artifact.field().interpolate(&[x, y, 0.4, 10.0, 5.0]).unwrap();
                assert!((slice.value_at(ix, iy) - direct).abs() < 1e-6);
            }
        }
        assert!(matches!(
            artifact.slice(0.0, 50.0, 5.0, &SliceOptions::default()),
            Err(ZoneError::Grid(GridError::OutOfDomain { axis: 3, .. }))
        ));
    }

    #[test]
    fn contour_of_a_radial_field_is_a_circle() {
        // marching squares on v = r - 5 over a fine lattice
        let xs: Vec<f64> = (0..81).map(|k| -10.0 + 0.25 * k as f64).collect();
        let ys = xs.clone();
        let mut values = Vec::new();
        for &y in &ys {
            for &x in &xs {
                values.push((x * x + y * y).sqrt() - 5.0);
            }
        }
        let contour = zero_contour(&xs, &ys, &values);
        assert_eq!(contour.len(), 1, "one closed loop expected");
        let loop0 = &contour[0];
        assert!(loop0.len() > 50);
        for p in loop0 {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 5.0).abs() < 0.05, "contour point at radius {r}");
        }
        // closed: first and last points coincide
        let (a, b) = (loop0[0], *loop0.last().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn svg_and_csv_writers_emit_well_formed_output() {
        let artifact = test_artifact(false);
        let slice = artifact.slice(0.0, 5.0, 5.0, &SliceOptions { nx: 40, ny: 30 }).unwrap();
        let mut csv = Vec::new();
        write_slice_csv(&slice, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,value\n"));
        assert_eq!(text.lines().count(), 1 + 40 * 30);

        let mut svg = Vec::new();
        write_slice_svg(&slice, &Params::default().geometry(), &mut svg).unwrap();
        let text = String::from_utf8(svg).unwrap();
        assert!(text.starts_with("<svg "));
        assert!(text.trim_end().ends_with("</svg>"));
        assert!(text.contains("<polyline"), "zero contour must appear");
    }
}
