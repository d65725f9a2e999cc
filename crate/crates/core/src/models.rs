//! Embedding tables and bilinear score functions.
//!
//! * CP: separate head-side and tail-side entity factors, `Σ_k a_hk c_rk b_tk`.
//! * DistMult: one entity table, `Σ_k e_hk r_k e_tk`.
//! * ComplEx: complex coordinates stored as adjacent `(re, im)` pairs,
//!   `Re(Σ_k h_k r_k conj(t_k))`.
//! * RESCAL: one row-major `d × d` matrix per relation, `hᵀ M_r t`.
//!
//! Scores are computed by shared kernels so `score_all` agrees bit-for-bit
//! with repeated `score` calls.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{check_id, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cp,
    DistMult,
    ComplEx,
    Rescal,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Cp,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::Rescal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cp => "cp",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::Rescal => "rescal",
        }
    }

    /// Reals per entity row.
    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * dim,
            _ => dim,
        }
    }

    /// Reals per relation row.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * dim,
            ModelKind::Rescal => dim * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(ModelKind::Cp),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            "rescal" => Ok(ModelKind::Rescal),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Dense row-major table of `rows × width` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, width: usize) -> Self {
        Table {
            rows,
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn from_vec(rows: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(Error::LengthMismatch {
                expected: rows * width,
                found: data.len(),
            });
        }
        Ok(Table { rows, width, data })
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, width: usize, half_width: f64, rng: &mut R) -> Self {
        let data = (0..rows * width)
            .map(|_| rng.gen_range(-half_width..half_width))
            .collect();
        Table { rows, width, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which parameter table a gradient row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableId {
    /// Entity rows; the head-side factors for CP.
    Entities,
    /// CP tail-side factors.
    Tails,
    Relations,
}

impl TableId {
    pub fn name(self) -> &'static str {
        match self {
            TableId::Entities => "entities",
            TableId::Tails => "tails",
            TableId::Relations => "relations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    entities: Table,
    tails: Option<Table>,
    relations: Table,
}

/// Default initialization scale: uniform on `±0.1/√d`.
pub fn init_half_width(dim: usize) -> f64 {
    0.1 / (dim as f64).sqrt()
}

impl ModelParams {
    pub fn zeros(kind: ModelKind, num_entities: usize, num_relations: usize, dim: usize) -> Self {
        let ew = kind.entity_width(dim);
        ModelParams {
            kind,
            dim,
            entities: Table::zeros(num_entities, ew),
            tails: (kind == ModelKind::Cp).then(|| Table::zeros(num_entities, ew)),
            relations: Table::zeros(num_relations, kind.relation_width(dim)),
        }
    }

    /// Centered uniform initialization of every table, drawn in table order.
    pub fn random<R: Rng + ?Sized>(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::random_scaled(kind, num_entities, num_relations, dim, init_half_width(dim), rng)
    }

    pub fn random_scaled<R: Rng + ?Sized>(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        half_width: f64,
        rng: &mut R,
    ) -> Self {
        let ew = kind.entity_width(dim);
        let entities = Table::uniform(num_entities, ew, half_width, rng);
        let tails = (kind == ModelKind::Cp).then(|| Table::uniform(num_entities, ew, half_width, rng));
        let relations = Table::uniform(num_relations, kind.relation_width(dim), half_width, rng);
        ModelParams {
            kind,
            dim,
            entities,
            tails,
            relations,
        }
    }

    /// Assembles parameters from explicit tables, checking their shapes.
    pub fn from_tables(
        kind: ModelKind,
        dim: usize,
        entities: Table,
        tails: Option<Table>,
        relations: Table,
    ) -> Result<Self> {
        let ew = kind.entity_width(dim);
        let bad = |what: &str| Err(Error::Contract(format!("{what} has the wrong shape for {kind} d={dim}")));
        if entities.width != ew {
            return bad("entity table");
        }
        match (&tails, kind) {
            (Some(t), ModelKind::Cp) if t.width == ew && t.rows == entities.rows => {}
            (None, k) if k != ModelKind::Cp => {}
            _ => return bad("tail table"),
        }
        if relations.width != kind.relation_width(dim) {
            return bad("relation table");
        }
        Ok(ModelParams {
            kind,
            dim,
            entities,
            tails,
            relations,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entities.rows
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows
    }

    pub fn table(&self, id: TableId) -> &Table {
        match id {
            TableId::Entities => &self.entities,
            TableId::Tails => self.tails.as_ref().unwrap_or(&self.entities),
            TableId::Relations => &self.relations,
        }
    }

    pub fn table_mut(&mut self, id: TableId) -> &mut Table {
        match id {
            TableId::Entities => &mut self.entities,
            TableId::Tails => self.tails.as_mut().unwrap_or(&mut self.entities),
            TableId::Relations => &mut self.relations,
        }
    }

    /// Tables in storage order: entities, CP tails, relations.
    pub fn tables(&self) -> Vec<(TableId, &Table)> {
        let mut out = vec![(TableId::Entities, &self.entities)];
        if let Some(t) = &self.tails {
            out.push((TableId::Tails, t));
        }
        out.push((TableId::Relations, &self.relations));
        out
    }

    /// Table receiving the tail-slot gradient.
    pub fn tail_table(&self) -> TableId {
        if self.tails.is_some() {
            TableId::Tails
        } else {
            TableId::Entities
        }
    }

    #[inline]
    pub fn head_row(&self, e: u32) -> &[f64] {
        self.entities.row(e as usize)
    }

    #[inline]
    pub fn tail_row(&self, e: u32) -> &[f64] {
        self.table(self.tail_table()).row(e as usize)
    }

    #[inline]
    pub fn relation_row(&self, r: u32) -> &[f64] {
        self.relations.row(r as usize)
    }

    pub fn check(&self, triple: Triple) -> Result<()> {
        check_id("entity", triple.head, self.num_entities())?;
        check_id("relation", triple.relation, self.num_relations())?;
        check_id("entity", triple.tail, self.num_entities())
    }

    pub fn is_finite(&self) -> bool {
        self.tables().iter().all(|(_, t)| t.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<TableId> {
        self.tables()
            .into_iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(id, _)| id)
    }
}

// ---------------------------------------------------------------------------
// Score kernels

#[inline]
fn real_trilinear(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..h.len() {
        acc += (h[k] * r[k]) * t[k];
    }
    acc
}

#[inline]
fn complex_trilinear(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in (0..h.len()).step_by(2) {
        let (hr_re, hr_im) = complex_mul(h[k], h[k + 1], r[k], r[k + 1]);
        acc += hr_re * t[k] + hr_im * t[k + 1];
    }
    acc
}

#[inline]
fn complex_mul(a_re: f64, a_im: f64, b_re: f64, b_im: f64) -> (f64, f64) {
    (a_re * b_re - a_im * b_im, a_re * b_im + a_im * b_re)
}

/// `u = Mᵀ h` with `u_j` accumulated over ascending `i`.
fn left_product(h: &[f64], m: &[f64], out: &mut [f64]) {
    let d = h.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        let hi = h[i];
        let row = &m[i * d..(i + 1) * d];
        for j in 0..d {
            out[j] += hi * row[j];
        }
    }
}

/// `v = M t`.
fn right_product(m: &[f64], t: &[f64], out: &mut [f64]) {
    let d = t.len();
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..d {
            acc += row[j] * t[j];
        }
        out[i] = acc;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

fn rescal_score(h: &[f64], m: &[f64], t: &[f64], scratch: &mut [f64]) -> f64 {
    left_product(h, m, scratch);
    dot(scratch, t)
}

#[inline]
fn score_rows(kind: ModelKind, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        ModelKind::Cp | ModelKind::DistMult => real_trilinear(h, r, t),
        ModelKind::ComplEx => complex_trilinear(h, r, t),
        ModelKind::Rescal => {
            let mut scratch = vec![0.0; h.len()];
            rescal_score(h, r, t, &mut scratch)
        }
    }
}

pub fn score(params: &ModelParams, triple: Triple) -> Result<f64> {
    params.check(triple)?;
    Ok(score_unchecked(params, triple))
}

#[inline]
pub(crate) fn score_unchecked(params: &ModelParams, triple: Triple) -> f64 {
    score_rows(
        params.kind,
        params.head_row(triple.head),
        params.relation_row(triple.relation),
        params.tail_row(triple.tail),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    PredictTail,
    PredictHead,
}

/// Scores `(anchor, relation, v)` (predict-tail) or `(v, relation, anchor)`
/// (predict-head) for every entity `v`.
pub fn score_all(
    params: &ModelParams,
    anchor: u32,
    relation: u32,
    direction: Direction,
) -> Result<Vec<f64>> {
    check_id("entity", anchor, params.num_entities())?;
    check_id("relation", relation, params.num_relations())?;
    let mut out = vec![0.0; params.num_entities()];
    score_all_into(params, anchor, relation, direction, &mut out);
    Ok(out)
}

pub(crate) fn score_all_into(
    params: &ModelParams,
    anchor: u32,
    relation: u32,
    direction: Direction,
    out: &mut [f64],
) {
    let kind = params.kind;
    let r = params.relation_row(relation);
    let n = params.num_entities();
    match (kind, direction) {
        (ModelKind::Cp | ModelKind::DistMult, Direction::PredictTail) => {
            let h = params.head_row(anchor);
            let q: Vec<f64> = h.iter().zip(r).map(|(a, b)| a * b).collect();
            let tails = params.table(params.tail_table());
            for (v, slot) in out.iter_mut().enumerate().take(n) {
                *slot = dot(&q, tails.row(v));
            }
        }
        (ModelKind::ComplEx, Direction::PredictTail) => {
            let h = params.head_row(anchor);
            let mut q = vec![0.0; h.len()];
            for k in (0..h.len()).step_by(2) {
                let (re, im) = complex_mul(h[k], h[k + 1], r[k], r[k + 1]);
                q[k] = re;
                q[k + 1] = im;
            }
            for (v, slot) in out.iter_mut().enumerate().take(n) {
                let t = params.entities.row(v);
                let mut acc = 0.0;
                for k in (0..q.len()).step_by(2) {
                    acc += q[k] * t[k] + q[k + 1] * t[k + 1];
                }
                *slot = acc;
            }
        }
        (ModelKind::Rescal, Direction::PredictTail) => {
            let mut u = vec![0.0; params.dim];
            left_product(params.head_row(anchor), r, &mut u);
            for (v, slot) in out.iter_mut().enumerate().take(n) {
                *slot = dot(&u, params.entities.row(v));
            }
        }
        (ModelKind::Rescal, Direction::PredictHead) => {
            let t = params.tail_row(anchor);
            let mut scratch = vec![0.0; params.dim];
            for (v, slot) in out.iter_mut().enumerate().take(n) {
                *slot = rescal_score(params.entities.row(v), r, t, &mut scratch);
            }
        }
        (_, Direction::PredictHead) => {
            let t = params.tail_row(anchor);
            for (v, slot) in out.iter_mut().enumerate().take(n) {
                *slot = score_rows(kind, params.head_row(v as u32), r, t);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients

/// Gradient rows for the three parameter rows one triple touches.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub triple: Triple,
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

impl TripleGradient {
    pub fn zeros(params: &ModelParams, triple: Triple) -> Self {
        let ew = params.kind.entity_width(params.dim);
        TripleGradient {
            triple,
            head: vec![0.0; ew],
            relation: vec![0.0; params.kind.relation_width(params.dim)],
            tail: vec![0.0; ew],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self
            .head
            .iter_mut()
            .chain(self.relation.iter_mut())
            .chain(self.tail.iter_mut())
        {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.head
            .iter()
            .chain(&self.relation)
            .chain(&self.tail)
            .all(|v| v.is_finite())
    }
}

/// Gradient of the score with respect to the head, relation and tail rows.
pub fn score_grad(params: &ModelParams, triple: Triple) -> Result<TripleGradient> {
    params.check(triple)?;
    let mut g = TripleGradient::zeros(params, triple);
    let h = params.head_row(triple.head);
    let r = params.relation_row(triple.relation);
    let t = params.tail_row(triple.tail);
    match params.kind {
        ModelKind::Cp | ModelKind::DistMult => {
            for k in 0..params.dim {
                g.head[k] = r[k] * t[k];
                g.relation[k] = h[k] * t[k];
                g.tail[k] = h[k] * r[k];
            }
        }
        ModelKind::ComplEx => {
            for k in (0..h.len()).step_by(2) {
                let (h_re, h_im, r_re, r_im, t_re, t_im) =
                    (h[k], h[k + 1], r[k], r[k + 1], t[k], t[k + 1]);
                g.head[k] = r_re * t_re + r_im * t_im;
                g.head[k + 1] = r_re * t_im - r_im * t_re;
                g.relation[k] = h_re * t_re + h_im * t_im;
                g.relation[k + 1] = h_re * t_im - h_im * t_re;
                let (hr_re, hr_im) = complex_mul(h_re, h_im, r_re, r_im);
                g.tail[k] = hr_re;
                g.tail[k + 1] = hr_im;
            }
        }
        ModelKind::Rescal => {
            let d = params.dim;
            right_product(r, t, &mut g.head);
            left_product(h, r, &mut g.tail);
            for i in 0..d {
                for j in 0..d {
                    g.relation[i * d + j] = h[i] * t[j];
                }
            }
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Interaction vectors consumed by the sparse regularizer

/// The four non-negative vectors `h², t², (h∘r)², (t∘r)²` of a triple, in
/// that order. Complex coordinates contribute their squared modulus; RESCAL
/// uses `(M_rᵀ h)²` and `(M_r t)²` for the relation-coupled terms.
pub fn interaction_vectors(params: &ModelParams, triple: Triple) -> Result<[Vec<f64>; 4]> {
    params.check(triple)?;
    Ok(interaction_vectors_unchecked(params, triple))
}

pub(crate) fn interaction_vectors_unchecked(params: &ModelParams, triple: Triple) -> [Vec<f64>; 4] {
    let h = params.head_row(triple.head);
    let r = params.relation_row(triple.relation);
    let t = params.tail_row(triple.tail);
    let d = params.dim;
    match params.kind {
        ModelKind::Cp | ModelKind::DistMult => [
            h.iter().map(|v| v * v).collect(),
            t.iter().map(|v| v * v).collect(),
            h.iter().zip(r).map(|(a, b)| (a * b) * (a * b)).collect(),
            t.iter().zip(r).map(|(a, b)| (a * b) * (a * b)).collect(),
        ],
        ModelKind::ComplEx => {
            let modulus = |x: &[f64], k: usize| x[2 * k] * x[2 * k] + x[2 * k + 1] * x[2 * k + 1];
            let mut out = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
            for k in 0..d {
                let (mh, mt, mr) = (modulus(h, k), modulus(t, k), modulus(r, k));
                out[0][k] = mh;
                out[1][k] = mt;
                out[2][k] = mh * mr;
                out[3][k] = mt * mr;
            }
            out
        }
        ModelKind::Rescal => {
            let mut u = vec![0.0; d];
            let mut v = vec![0.0; d];
            left_product(h, r, &mut u);
            right_product(r, t, &mut v);
            [
                h.iter().map(|x| x * x).collect(),
                t.iter().map(|x| x * x).collect(),
                u.iter().map(|x| x * x).collect(),
                v.iter().map(|x| x * x).collect(),
            ]
        }
    }
}

/// Gradient of `Σ_k Σ_d w_k[d] · x_k[d]` where `x_k` are the interaction
/// vectors of `triple` and `w_k` are fixed per-entry weights.
pub fn interaction_backward(
    params: &ModelParams,
    triple: Triple,
    weights: [&[f64]; 4],
) -> Result<TripleGradient> {
    params.check(triple)?;
    for w in weights {
        if w.len() != params.dim {
            return Err(Error::LengthMismatch {
                expected: params.dim,
                found: w.len(),
            });
        }
    }
    Ok(interaction_backward_unchecked(params, triple, weights))
}

pub(crate) fn interaction_backward_unchecked(
    params: &ModelParams,
    triple: Triple,
    [w1, w2, w3, w4]: [&[f64]; 4],
) -> TripleGradient {
    let mut g = TripleGradient::zeros(params, triple);
    let h = params.head_row(triple.head);
    let r = params.relation_row(triple.relation);
    let t = params.tail_row(triple.tail);
    let d = params.dim;
    match params.kind {
        ModelKind::Cp | ModelKind::DistMult => {
            for k in 0..d {
                let hr = h[k] * r[k];
                let tr = t[k] * r[k];
                g.head[k] = 2.0 * h[k] * w1[k] + 2.0 * hr * r[k] * w3[k];
                g.tail[k] = 2.0 * t[k] * w2[k] + 2.0 * tr * r[k] * w4[k];
                g.relation[k] = 2.0 * hr * h[k] * w3[k] + 2.0 * tr * t[k] * w4[k];
            }
        }
        ModelKind::ComplEx => {
            for k in 0..d {
                let (re, im) = (2 * k, 2 * k + 1);
                let mh = h[re] * h[re] + h[im] * h[im];
                let mt = t[re] * t[re] + t[im] * t[im];
                let mr = r[re] * r[re] + r[im] * r[im];
                let head_scale = 2.0 * (w1[k] + mr * w3[k]);
                let tail_scale = 2.0 * (w2[k] + mr * w4[k]);
                let rel_scale = 2.0 * (mh * w3[k] + mt * w4[k]);
                g.head[re] = head_scale * h[re];
                g.head[im] = head_scale * h[im];
                g.tail[re] = tail_scale * t[re];
                g.tail[im] = tail_scale * t[im];
                g.relation[re] = rel_scale * r[re];
                g.relation[im] = rel_scale * r[im];
            }
        }
        ModelKind::Rescal => {
            let mut u = vec![0.0; d];
            let mut v = vec![0.0; d];
            left_product(h, r, &mut u);
            right_product(r, t, &mut v);
            // Upstream gradients of the two projected vectors.
            let gu: Vec<f64> = (0..d).map(|j| 2.0 * u[j] * w3[j]).collect();
            let gv: Vec<f64> = (0..d).map(|i| 2.0 * v[i] * w4[i]).collect();
            let mut m_gu = vec![0.0; d];
            let mut mt_gv = vec![0.0; d];
            right_product(r, &gu, &mut m_gu);
            left_product(&gv, r, &mut mt_gv);
            for k in 0..d {
                g.head[k] = 2.0 * h[k] * w1[k] + m_gu[k];
                g.tail[k] = 2.0 * t[k] * w2[k] + mt_gv[k];
            }
            for i in 0..d {
                for j in 0..d {
                    g.relation[i * d + j] = h[i] * gu[j] + gv[i] * t[j];
                }
            }
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Sparse gradient accumulation

/// Dense per-table gradient buffer that remembers which rows were touched.
#[derive(Debug, Clone)]
pub struct RowGradients {
    width: usize,
    data: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<u32>,
}

impl RowGradients {
    pub fn new(rows: usize, width: usize) -> Self {
        RowGradients {
            width,
            data: vec![0.0; rows * width],
            marked: vec![false; rows],
            touched: Vec::new(),
        }
    }

    pub fn add(&mut self, row: u32, values: &[f64], scale: f64) {
        let i = row as usize;
        if !self.marked[i] {
            self.marked[i] = true;
            self.touched.push(row);
        }
        let dst = &mut self.data[i * self.width..(i + 1) * self.width];
        for (d, v) in dst.iter_mut().zip(values) {
            *d += scale * v;
        }
    }

    pub fn row(&self, row: u32) -> &[f64] {
        let i = row as usize;
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Touched rows in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &row in &self.touched {
            let i = row as usize;
            self.marked[i] = false;
            self.data[i * self.width..(i + 1) * self.width].fill(0.0);
        }
        self.touched.clear();
    }
}

/// Accumulated gradients for every table of a model.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub entities: RowGradients,
    pub tails: Option<RowGradients>,
    pub relations: RowGradients,
}

impl ModelGradients {
    pub fn for_params(params: &ModelParams) -> Self {
        let ew = params.kind.entity_width(params.dim);
        ModelGradients {
            entities: RowGradients::new(params.num_entities(), ew),
            tails: params
                .tails
                .as_ref()
                .map(|t| RowGradients::new(t.rows, t.width)),
            relations: RowGradients::new(params.num_relations(), params.relations.width),
        }
    }

    pub fn table(&self, id: TableId) -> &RowGradients {
        match id {
            TableId::Entities => &self.entities,
            TableId::Tails => self.tails.as_ref().unwrap_or(&self.entities),
            TableId::Relations => &self.relations,
        }
    }

    pub fn tables(&self) -> Vec<(TableId, &RowGradients)> {
        let mut out = vec![(TableId::Entities, &self.entities)];
        if let Some(t) = &self.tails {
            out.push((TableId::Tails, t));
        }
        out.push((TableId::Relations, &self.relations));
        out
    }

    /// Adds `scale · g` into the rows `g.triple` touches.
    pub fn add_triple(&mut self, g: &TripleGradient, scale: f64) {
        self.entities.add(g.triple.head, &g.head, scale);
        self.relations.add(g.triple.relation, &g.relation, scale);
        match &mut self.tails {
            Some(tails) => tails.add(g.triple.tail, &g.tail, scale),
            None => self.entities.add(g.triple.tail, &g.tail, scale),
        }
    }

    pub fn clear(&mut self) {
        self.entities.clear();
        if let Some(t) = &mut self.tails {
            t.clear();
        }
        self.relations.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn real_model(kind: ModelKind, h: &[f64], r: &[f64], t: &[f64]) -> (ModelParams, Triple) {
        let d = h.len() / kind.entity_width(1);
        let mut p = ModelParams::zeros(kind, 2, 1, d);
        p.table_mut(TableId::Entities).row_mut(0).copy_from_slice(h);
        p.table_mut(p.tail_table()).row_mut(1).copy_from_slice(t);
        p.table_mut(TableId::Relations).row_mut(0).copy_from_slice(r);
        (p, Triple::new(0, 0, 1))
    }

    #[test]
    fn cp_and_distmult_scores() {
        let (p, tr) = real_model(ModelKind::Cp, &[1.0, 2.0], &[1.0, 1.0], &[1.0, 0.5]);
        assert_eq!(score(&p, tr).unwrap(), 2.0);
        let g = score_grad(&p, tr).unwrap();
        assert_eq!(g.head, [1.0, 0.5]);
        assert_eq!(g.relation, [1.0, 1.0]);
        assert_eq!(g.tail, [1.0, 2.0]);
    }

    #[test]
    fn complex_scores() {
        // Zero imaginary parts reduce to DistMult.
        let (p, tr) = real_model(
            ModelKind::ComplEx,
            &[1.0, 0.0, 2.0, 0.0],
            &[1.0, 0.0, 1.0, 0.0],
            &[1.0, 0.0, 0.5, 0.0],
        );
        assert_eq!(p.dim(), 2);
        assert_eq!(score(&p, tr).unwrap(), 2.0);

        // (1+i) · i · conj(1) = -1 + i.
        let (p, tr) = real_model(ModelKind::ComplEx, &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]);
        assert_eq!(p.dim(), 1);
        assert_eq!(score(&p, tr).unwrap(), -1.0);
    }

    #[test]
    fn rescal_identity() {
        let mut p = ModelParams::zeros(ModelKind::Rescal, 2, 1, 2);
        p.table_mut(TableId::Entities).row_mut(0).copy_from_slice(&[1.0, 2.0]);
        p.table_mut(TableId::Entities).row_mut(1).copy_from_slice(&[3.0, 4.0]);
        p.table_mut(TableId::Relations)
            .row_mut(0)
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let tr = Triple::new(0, 0, 1);
        assert_eq!(score(&p, tr).unwrap(), 11.0);
        let g = score_grad(&p, tr).unwrap();
        assert_eq!(g.head, [3.0, 4.0]);
        assert_eq!(g.tail, [1.0, 2.0]);
        assert_eq!(g.relation, [3.0, 4.0, 6.0, 8.0]);
        let x = interaction_vectors(&p, tr).unwrap();
        assert_eq!(x[0], x[2]);
        assert_eq!(x[1], x[3]);
        assert_eq!(x[0], [1.0, 4.0]);
    }

    #[test]
    fn zero_tail_gives_zero_head_gradient() {
        for kind in [ModelKind::Cp, ModelKind::DistMult, ModelKind::ComplEx] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut p = ModelParams::random_scaled(kind, 3, 2, 4, 1.0, &mut rng);
            let tail = p.tail_table();
            p.table_mut(tail).row_mut(2).fill(0.0);
            let g = score_grad(&p, Triple::new(0, 1, 2)).unwrap();
            assert!(g.head.iter().all(|&v| v == 0.0), "{kind}");
        }
    }

    #[test]
    fn interaction_examples() {
        let (p, tr) = real_model(ModelKind::Cp, &[1.0, 2.0], &[1.0, 1.0], &[0.0, 1.0]);
        let x = interaction_vectors(&p, tr).unwrap();
        assert_eq!(x[0], [1.0, 4.0]);
        assert_eq!(x[1], [0.0, 1.0]);
        assert_eq!(x[2], [1.0, 4.0]);
        assert_eq!(x[3], [0.0, 1.0]);

        let (p, tr) = real_model(ModelKind::ComplEx, &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]);
        let x = interaction_vectors(&p, tr).unwrap();
        assert_eq!(x[0], [2.0]);
        assert_eq!(x[2], [2.0]);
    }

    #[test]
    fn out_of_range_ids() {
        let p = ModelParams::zeros(ModelKind::Cp, 2, 1, 3);
        assert!(matches!(
            score(&p, Triple::new(0, 1, 0)),
            Err(Error::IdOutOfRange { kind: "relation", .. })
        ));
        assert!(score_all(&p, 5, 0, Direction::PredictTail).is_err());
        assert!(score_grad(&p, Triple::new(2, 0, 0)).is_err());
    }

    #[test]
    fn score_all_matches_score_bitwise() {
        for kind in ModelKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let p = ModelParams::random_scaled(kind, 9, 3, 5, 1.0, &mut rng);
            for r in 0..3 {
                for a in 0..9 {
                    let tails = score_all(&p, a, r, Direction::PredictTail).unwrap();
                    let heads = score_all(&p, a, r, Direction::PredictHead).unwrap();
                    for v in 0..9u32 {
                        let st = score(&p, Triple::new(a, r, v)).unwrap();
                        let sh = score(&p, Triple::new(v, r, a)).unwrap();
                        assert_eq!(tails[v as usize].to_bits(), st.to_bits(), "{kind}");
                        assert_eq!(heads[v as usize].to_bits(), sh.to_bits(), "{kind}");
                    }
                }
            }
        }
    }

    #[test]
    fn distmult_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::random_scaled(ModelKind::DistMult, 6, 2, 4, 1.0, &mut rng);
        let heads = score_all(&p, 2, 1, Direction::PredictHead).unwrap();
        let tails = score_all(&p, 2, 1, Direction::PredictTail).unwrap();
        for (a, b) in heads.iter().zip(&tails) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_buffer_tracks_rows() {
        let p = ModelParams::zeros(ModelKind::DistMult, 4, 2, 2);
        let mut grads = ModelGradients::for_params(&p);
        let mut g = TripleGradient::zeros(&p, Triple::new(1, 0, 1));
        g.head = vec![1.0, 2.0];
        g.tail = vec![3.0, 4.0];
        g.relation = vec![5.0, 6.0];
        grads.add_triple(&g, 0.5);
        assert_eq!(grads.entities.touched(), &[1]);
        assert_eq!(grads.entities.row(1), &[2.0, 3.0]);
        assert_eq!(grads.relations.row(0), &[2.5, 3.0]);
        grads.clear();
        assert!(grads.entities.touched().is_empty());
        assert_eq!(grads.entities.row(1), &[0.0, 0.0]);
    }
}
