//! P1 meshes of an interval or a rectangle, nodal fields, quadrature, the
//! boundary distance function and Orlicz modulars / Luxemburg norms.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nfunction::YoungFunction;

/// The domain: an interval or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub enum Geometry {
    Interval { x0: f64, x1: f64 },
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Interval { .. } => 1,
            Geometry::Rectangle { .. } => 2,
        }
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        match *self {
            Geometry::Interval { x0, x1 } => x1 - x0,
            Geometry::Rectangle { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Geometry::Interval { x0, x1 } => x1 - x0,
            Geometry::Rectangle { x0, x1, y0, y1 } => (x1 - x0).hypot(y1 - y0),
        }
    }

    /// Exact distance from an interior point to the boundary.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let d = match *self {
            Geometry::Interval { x0, x1 } => (p[0] - x0).min(x1 - p[0]),
            Geometry::Rectangle { x0, x1, y0, y1 } => (p[0] - x0)
                .min(x1 - p[0])
                .min(p[1] - y0)
                .min(y1 - p[1]),
        };
        d.max(0.0)
    }
}

/// A P1 element: a segment (2 nodes) or a triangle (3 nodes) with the
/// constant gradients of its barycentric basis functions.
#[derive(Debug, Clone)]
pub struct Element {
    pub nodes: [usize; 3],
    pub n_local: usize,
    pub measure: f64,
    pub grads: [[f64; 2]; 3],
}

impl Element {
    pub fn local(&self) -> &[usize] {
        &self.nodes[..self.n_local]
    }

    fn diameter(&self, coords: &[[f64; 2]]) -> f64 {
        let l = self.local();
        let mut d: f64 = 0.0;
        for i in 0..l.len() {
            for j in i + 1..l.len() {
                let (a, b) = (coords[l[i]], coords[l[j]]);
                d = d.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        d
    }
}

/// Quadrature point in barycentric coordinates with weight relative to the
/// element measure.
#[derive(Debug, Clone, Copy)]
pub struct QuadRule {
    pub bary: [f64; 3],
    pub weight: f64,
}

const SQRT_3_5: f64 = 0.774_596_669_241_483_4;

/// 3-point Gauss rule on a segment.
pub const GAUSS3_SEGMENT: [QuadRule; 3] = [
    QuadRule {
        bary: [0.5 + 0.5 * SQRT_3_5, 0.5 - 0.5 * SQRT_3_5, 0.0],
        weight: 5.0 / 18.0,
    },
    QuadRule {
        bary: [0.5, 0.5, 0.0],
        weight: 8.0 / 18.0,
    },
    QuadRule {
        bary: [0.5 - 0.5 * SQRT_3_5, 0.5 + 0.5 * SQRT_3_5, 0.0],
        weight: 5.0 / 18.0,
    },
];

/// 3-point interior rule on a triangle, exact for quadratics.
pub const STRANG3_TRIANGLE: [QuadRule; 3] = [
    QuadRule {
        bary: [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        weight: 1.0 / 3.0,
    },
    QuadRule {
        bary: [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        weight: 1.0 / 3.0,
    },
    QuadRule {
        bary: [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        weight: 1.0 / 3.0,
    },
];

#[derive(Debug, Clone)]
pub struct Mesh {
    geometry: Geometry,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    boundary: Vec<bool>,
}

impl Mesh {
    /// Uniform mesh of `[x0, x1]` with `cells` segments.
    pub fn interval(x0: f64, x1: f64, cells: usize) -> Result<Arc<Mesh>> {
        if !(x1 > x0) || cells == 0 {
            return Err(Error::Config(format!(
                "invalid interval [{x0}, {x1}] with {cells} cells"
            )));
        }
        let h = (x1 - x0) / cells as f64;
        let nodes: Vec<[f64; 2]> = (0..=cells)
            .map(|i| {
                let x = if i == cells { x1 } else { x0 + i as f64 * h };
                [x, 0.0]
            })
            .collect();
        let elements = (0..cells).map(|i| [i, i + 1, 0]).collect::<Vec<_>>();
        let mut boundary = vec![false; cells + 1];
        boundary[0] = true;
        boundary[cells] = true;
        Mesh::from_parts(Geometry::Interval { x0, x1 }, nodes, elements, 2, boundary)
    }

    /// Uniform tensor grid of a rectangle, each cell split along the
    /// diagonal from its lower-left to its upper-right corner.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Arc<Mesh>> {
        if !(x1 > x0 && y1 > y0) || nx == 0 || ny == 0 {
            return Err(Error::Config(format!(
                "invalid rectangle [{x0},{x1}]x[{y0},{y1}] with {nx}x{ny} cells"
            )));
        }
        let (hx, hy) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity(nodes.capacity());
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { x1 } else { x0 + i as f64 * hx };
                let y = if j == ny { y1 } else { y0 + j as f64 * hy };
                nodes.push([x, y]);
                boundary.push(i == 0 || j == 0 || i == nx || j == ny);
            }
        }
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                elements.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Mesh::from_parts(
            Geometry::Rectangle { x0, x1, y0, y1 },
            nodes,
            elements,
            3,
            boundary,
        )
    }

    /// Assembles a mesh from raw connectivity. Degenerate elements are kept
    /// and reported by [`gradient`].
    pub fn from_parts(
        geometry: Geometry,
        nodes: Vec<[f64; 2]>,
        connectivity: Vec<[usize; 3]>,
        n_local: usize,
        boundary: Vec<bool>,
    ) -> Result<Arc<Mesh>> {
        if boundary.len() != nodes.len() {
            return Err(Error::Config("boundary mask length mismatch".into()));
        }
        let elements = connectivity
            .into_iter()
            .map(|c| {
                if c[..n_local].iter().any(|&n| n >= nodes.len()) {
                    return Err(Error::Config("element references a missing node".into()));
                }
                Ok(element_geometry(&nodes, c, n_local))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(Mesh {
            geometry,
            nodes,
            elements,
            boundary,
        }))
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.boundary[i])
    }

    pub fn quad_rule(&self) -> &'static [QuadRule] {
        match self.dim() {
            1 => &GAUSS3_SEGMENT,
            _ => &STRANG3_TRIANGLE,
        }
    }

    /// Physical coordinates of a barycentric point of element `e`.
    pub fn point(&self, e: &Element, bary: &[f64; 3]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (k, &n) in e.local().iter().enumerate() {
            p[0] += bary[k] * self.nodes[n][0];
            p[1] += bary[k] * self.nodes[n][1];
        }
        p
    }

    /// Checks positive element measures, the boundary mask against the
    /// geometry, and quasi-uniformity (diameters within a factor 2).
    pub fn validate(&self) -> Result<()> {
        let mut dmin = f64::INFINITY;
        let mut dmax: f64 = 0.0;
        for (k, e) in self.elements.iter().enumerate() {
            if !(e.measure > 0.0) {
                return Err(Error::DegenerateElement(k));
            }
            let d = e.diameter(&self.nodes);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        if dmax > 2.0 * dmin {
            return Err(Error::Config(format!(
                "mesh not quasi-uniform: diameters in [{dmin}, {dmax}]"
            )));
        }
        let scale = self.geometry.diameter();
        for (i, p) in self.nodes.iter().enumerate() {
            let on_boundary = self.geometry.distance(*p) <= 1e-12 * scale;
            if on_boundary != self.boundary[i] {
                return Err(Error::Config(format!("boundary flag wrong at node {i}")));
            }
        }
        Ok(())
    }
}

fn element_geometry(nodes: &[[f64; 2]], c: [usize; 3], n_local: usize) -> Element {
    if n_local == 2 {
        let h = nodes[c[1]][0] - nodes[c[0]][0];
        let g = if h.abs() > 0.0 { 1.0 / h } else { f64::NAN };
        return Element {
            nodes: c,
            n_local,
            measure: h.abs(),
            grads: [[-g, 0.0], [g, 0.0], [0.0, 0.0]],
        };
    }
    let (p0, p1, p2) = (nodes[c[0]], nodes[c[1]], nodes[c[2]]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let inv = if det != 0.0 { 1.0 / det } else { f64::NAN };
    let grads = [
        [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
        [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
        [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
    ];
    Element {
        nodes: c,
        n_local,
        measure: 0.5 * det.abs(),
        grads,
    }
}

/// Nodal values of a continuous P1 function on a mesh.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::Config(format!(
                "field has {} values for {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        Self {
            values: vec![0.0; mesh.n_nodes()],
            mesh: mesh.clone(),
        }
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: &Arc<Mesh>, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self {
            values: mesh.nodes().iter().map(|&p| f(p)).collect(),
            mesh: mesh.clone(),
        }
    }

    /// Nodal interpolant of `f`, forced to zero on boundary nodes.
    pub fn zero_trace_from_fn(mesh: &Arc<Mesh>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut field = Self::from_fn(mesh, f);
        for (i, v) in field.values.iter_mut().enumerate() {
            if mesh.is_boundary(i) {
                *v = 0.0;
            }
        }
        field
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Membership in the zero-boundary space.
    pub fn is_zero_trace(&self) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(i, &v)| !self.mesh.is_boundary(i) || v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Pointwise combination with a field on the same mesh.
    pub fn zip_with(&self, other: &DiscreteField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(Arc::ptr_eq(&self.mesh, &other.mesh) || self.values.len() == other.values.len());
        Self {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &DiscreteField) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// Value at a barycentric point of element `e`.
    pub fn at(&self, e: &Element, bary: &[f64; 3]) -> f64 {
        e.local()
            .iter()
            .enumerate()
            .map(|(k, &n)| bary[k] * self.values[n])
            .sum()
    }

    /// Writes `x[,y],value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_fields_csv(path, &[("value", self)])
    }
}

/// Writes several fields on one mesh as CSV: node coordinates plus one
/// column per field.
pub fn write_fields_csv(path: &Path, fields: &[(&str, &DiscreteField)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_fields(&mut out, fields)?;
    out.flush()?;
    Ok(())
}

pub fn write_fields<W: Write>(out: &mut W, fields: &[(&str, &DiscreteField)]) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Ok(());
    };
    let mesh = first.mesh();
    let two_d = mesh.dim() == 2;
    let mut header = vec!["node", "x"];
    if two_d {
        header.push("y");
    }
    header.extend(fields.iter().map(|(name, _)| *name));
    writeln!(out, "{}", header.join(","))?;
    for (i, p) in mesh.nodes().iter().enumerate() {
        let mut row = vec![i.to_string(), p[0].to_string()];
        if two_d {
            row.push(p[1].to_string());
        }
        row.extend(fields.iter().map(|(_, f)| f.values()[i].to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a nodal CSV with columns `x[,y],value` (an optional leading `node`
/// column is ignored) and checks the coordinates against the mesh.
pub fn read_field_csv(mesh: &Arc<Mesh>, path: &Path) -> Result<DiscreteField> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let xc = col("x").ok_or_else(|| Error::Config(format!("{}: missing x column", path.display())))?;
    let yc = col("y");
    let vc = col("value")
        .unwrap_or(headers.len().saturating_sub(1));
    let mut values = Vec::with_capacity(mesh.n_nodes());
    let scale = mesh.geometry().diameter();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad number in row {i}", path.display())))
        };
        let node = mesh
            .nodes()
            .get(i)
            .ok_or_else(|| Error::Config(format!("{}: more rows than nodes", path.display())))?;
        let mut dist = (parse(xc)? - node[0]).abs();
        if let Some(yc) = yc {
            dist = dist.max((parse(yc)? - node[1]).abs());
        }
        if dist > 1e-9 * scale {
            return Err(Error::Config(format!(
                "{}: row {i} does not match node coordinates",
                path.display()
            )));
        }
        values.push(parse(vc)?);
    }
    DiscreteField::new(mesh.clone(), values)
}

/// Nodal boundary distance `d(x)`, exact for intervals and rectangles.
pub fn distance_function(mesh: &Arc<Mesh>) -> DiscreteField {
    DiscreteField::zero_trace_from_fn(mesh, |p| mesh.geometry().distance(p))
}

/// Constant gradient of a P1 field on every element.
pub fn gradient(field: &DiscreteField) -> Result<Vec<[f64; 2]>> {
    let mesh = field.mesh();
    mesh.elements()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if !(e.measure > 0.0) {
                return Err(Error::DegenerateElement(k));
            }
            Ok(element_gradient(e, field.values()))
        })
        .collect()
}

pub(crate) fn element_gradient(e: &Element, values: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (k, &n) in e.local().iter().enumerate() {
        g[0] += e.grads[k][0] * values[n];
        g[1] += e.grads[k][1] * values[n];
    }
    g
}

/// Weighted samples `(weight, |value|)` whose weighted sum of `F(|value|)`
/// approximates `int F(|f|)`.
#[derive(Debug, Clone)]
pub struct ModularSamples {
    weights: Vec<f64>,
    magnitudes: Vec<f64>,
}

impl ModularSamples {
    /// Quadrature samples of `|field|`.
    pub fn of_values(field: &DiscreteField) -> Self {
        let mesh = field.mesh();
        let rule = mesh.quad_rule();
        let mut weights = Vec::with_capacity(mesh.elements().len() * rule.len());
        let mut magnitudes = Vec::with_capacity(weights.capacity());
        for e in mesh.elements() {
            for q in rule {
                weights.push(q.weight * e.measure);
                magnitudes.push(field.at(e, &q.bary).abs());
            }
        }
        Self {
            weights,
            magnitudes,
        }
    }

    /// Per-element samples of `|grad field|` (constant on each element).
    pub fn of_gradient(field: &DiscreteField) -> Result<Self> {
        let grads = gradient(field)?;
        Ok(Self {
            weights: field.mesh().elements().iter().map(|e| e.measure).collect(),
            magnitudes: grads.iter().map(|g| g[0].hypot(g[1])).collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.magnitudes.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// `sum_k w_k F(|f_k| / lambda)`.
    pub fn modular<F: YoungFunction + ?Sized>(&self, f: &F, lambda: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.magnitudes)
            .map(|(w, v)| w * f.value(v / lambda))
            .sum()
    }

    /// `inf { lambda > 0 : modular(f / lambda) <= 1 }` by bisection in
    /// `log lambda` on `[1e-12 max, 1e12 max]`.
    pub fn luxemburg<F: YoungFunction + ?Sized>(&self, f: &F, rel_tol: f64) -> f64 {
        let top = self.max();
        if top == 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (1e-12 * top, 1e12 * top);
        while hi / lo - 1.0 > rel_tol {
            let mid = (lo * hi).sqrt();
            if self.modular(f, mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Relative tolerance of the Luxemburg-norm bisection.
pub const LUXEMBURG_REL_TOL: f64 = 1e-10;

/// `int Phi(|field|)` by element quadrature.
pub fn modular<F: YoungFunction + ?Sized>(nf: &F, field: &DiscreteField) -> f64 {
    ModularSamples::of_values(field).modular(nf, 1.0)
}

/// `int Phi(|grad field|)`.
pub fn modular_gradient<F: YoungFunction + ?Sized>(nf: &F, field: &DiscreteField) -> Result<f64> {
    Ok(ModularSamples::of_gradient(field)?.modular(nf, 1.0))
}

/// Luxemburg norm of the field, or of its gradient when `on_gradient`.
pub fn luxemburg_norm<F: YoungFunction + ?Sized>(
    nf: &F,
    field: &DiscreteField,
    on_gradient: bool,
) -> Result<f64> {
    let samples = if on_gradient {
        ModularSamples::of_gradient(field)?
    } else {
        ModularSamples::of_values(field)
    };
    Ok(samples.luxemburg(nf, LUXEMBURG_REL_TOL))
}

/// Both sides of `int Phi(u) <= int Phi(2 diam |grad u|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `(rhs - lhs) / max(rhs, tiny)`
    pub slack: f64,
}

pub fn check_poincare<F: YoungFunction + ?Sized>(
    nf: &F,
    field: &DiscreteField,
) -> Result<PoincareReport> {
    if !field.is_zero_trace() {
        return Err(Error::Config("Poincare check needs a zero-trace field".into()));
    }
    let diam = field.mesh().geometry().diameter();
    let lhs = modular(nf, field);
    let grads = ModularSamples::of_gradient(field)?;
    let rhs = grads.modular(nf, 1.0 / (2.0 * diam));
    let slack = if rhs > 0.0 { (rhs - lhs) / rhs } else { 0.0 };
    if lhs > rhs * (1.0 + 1e-9) + f64::MIN_POSITIVE {
        return Err(Error::BoundViolation {
            check: "poincare".into(),
            rho: lhs,
            t: rhs,
            margin: slack,
        });
    }
    Ok(PoincareReport { lhs, rhs, slack })
}

/// `int u v` by element quadrature.
pub fn inner_product(u: &DiscreteField, v: &DiscreteField) -> f64 {
    let mesh = u.mesh();
    let rule = mesh.quad_rule();
    mesh.elements()
        .iter()
        .map(|e| {
            rule.iter()
                .map(|q| q.weight * u.at(e, &q.bary) * v.at(e, &q.bary))
                .sum::<f64>()
                * e.measure
        })
        .sum()
}
