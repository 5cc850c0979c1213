//! JSON documents for instances, solve results and lotteries.

use std::io::{self, Write};

use nash_match::gen::ModelKind;
use nash_match::model::{
    Allocation, Hyperplane, LinearInstance, MarketInstance, NplcInstance, Segment, SplcInstance, TwoSidedInstance,
};
use nash_match::{SolveResult, Termination};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Matrices at or above this density are written densely.
pub const SPARSE_BELOW: f64 = 0.2;

/// Writes every float with 17 significant digits so values read back exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Decimal text with 17 significant digits; plain for `1e-5 <= |v| < 1e15`.
pub fn format_f64(v: f64) -> String {
    let sci = format!("{v:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if v == 0.0 || (-5..15).contains(&exp) {
        format!("{:.*}", (16 - exp).max(0) as usize, v)
    } else {
        sci
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixData {
    Dense(Vec<Vec<f64>>),
    Sparse { triplets: Vec<(usize, usize, f64)> },
}

impl MatrixData {
    pub fn encode(x: &Array2<f64>) -> Self {
        let nonzero = x.iter().filter(|&&v| v != 0.0).count();
        if (nonzero as f64) < SPARSE_BELOW * x.len() as f64 {
            let triplets = x.indexed_iter().filter(|(_, &v)| v != 0.0).map(|((i, j), &v)| (i, j, v)).collect();
            MatrixData::Sparse { triplets }
        } else {
            MatrixData::Dense(x.rows().into_iter().map(|r| r.to_vec()).collect())
        }
    }

    pub fn decode(&self, n: usize, name: &str) -> Result<Array2<f64>, CliError> {
        let mut x = Array2::zeros((n, n));
        match self {
            MatrixData::Dense(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Format(format!("{name} must be {n} x {n}")));
                }
                for (i, r) in rows.iter().enumerate() {
                    for (j, &v) in r.iter().enumerate() {
                        x[[i, j]] = v;
                    }
                }
            }
            MatrixData::Sparse { triplets } => {
                for &(i, j, v) in triplets {
                    if i >= n || j >= n {
                        return Err(CliError::Format(format!("{name} entry ({i}, {j}) outside {n} x {n}")));
                    }
                    x[[i, j]] = v;
                }
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneData {
    pub a: Vec<f64>,
    pub b: f64,
}

/// `[slope, length]` pairs of one agent-good pair.
pub type SegmentList = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format_version: u32,
    pub model: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Vec<SegmentList>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperplanes: Option<Vec<Vec<HyperplaneData>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InstanceFile {
    pub fn encode(instance: &MarketInstance, seed: Option<u64>) -> Self {
        let n = instance.n();
        let model = ModelKind::of(instance);
        let mut file = InstanceFile {
            format_version: FORMAT_VERSION,
            model: model.as_str().to_string(),
            n,
            u: None,
            w: None,
            c: None,
            segments: None,
            hyperplanes: None,
            seed,
        };
        match instance {
            MarketInstance::Linear(m) => {
                file.u = Some(MatrixData::encode(m.u()));
                if model == ModelKind::OneLad {
                    file.c = Some(m.c().to_vec());
                }
            }
            MarketInstance::TwoSided(m) => {
                file.u = Some(MatrixData::encode(m.u()));
                file.w = Some(MatrixData::encode(m.w()));
            }
            MarketInstance::Splc(m) => {
                let segs = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| m.segments(i, j).iter().map(|s| (s.slope, s.length)).collect())
                            .collect()
                    })
                    .collect();
                file.segments = Some(segs);
                file.c = Some(m.c().to_vec());
            }
            MarketInstance::Nplc(m) => {
                let hs = (0..n)
                    .map(|i| {
                        m.hyperplanes(i)
                            .iter()
                            .map(|h| HyperplaneData { a: h.a.clone(), b: h.b })
                            .collect()
                    })
                    .collect();
                file.hyperplanes = Some(hs);
                file.c = Some(m.c().to_vec());
            }
        }
        file
    }

    pub fn decode(&self) -> Result<MarketInstance, CliError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Format(format!("unsupported format_version {}", self.format_version)));
        }
        let model: ModelKind = self.model.parse()?;
        let n = self.n;
        let c = match &self.c {
            Some(c) if c.len() != n => return Err(CliError::Format(format!("c has {} entries, expected {n}", c.len()))),
            Some(c) => c.clone(),
            None => vec![0.0; n],
        };
        let need = |field: &str| CliError::Format(format!("model {model} requires field {field}"));
        let instance: MarketInstance = match model {
            ModelKind::OneLf | ModelKind::OneLad => {
                let u = self.u.as_ref().ok_or_else(|| need("u"))?.decode(n, "u")?;
                LinearInstance::new(u, c)?.into()
            }
            ModelKind::TwoLf => {
                let u = self.u.as_ref().ok_or_else(|| need("u"))?.decode(n, "u")?;
                let w = self.w.as_ref().ok_or_else(|| need("w"))?.decode(n, "w")?;
                TwoSidedInstance::new(u, w)?.into()
            }
            ModelKind::OneSad => {
                let rows = self.segments.as_ref().ok_or_else(|| need("segments"))?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Format(format!("segments must be {n} x {n}")));
                }
                let segs = rows
                    .iter()
                    .flatten()
                    .map(|pair| pair.iter().map(|&(slope, length)| Segment { slope, length }).collect())
                    .collect();
                SplcInstance::new(n, segs, c)?.into()
            }
            ModelKind::OneNad => {
                let rows = self.hyperplanes.as_ref().ok_or_else(|| need("hyperplanes"))?;
                let hs = rows
                    .iter()
                    .map(|r| r.iter().map(|h| Hyperplane { a: h.a.clone(), b: h.b }).collect())
                    .collect();
                NplcInstance::new(n, hs, c)?.into()
            }
        };
        if instance.n() != n {
            return Err(CliError::Format(format!("n = {n} does not match the data")));
        }
        Ok(instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AllocationData {
    Matrix(Vec<Vec<f64>>),
    /// `segments[i * n + j][k]` is the amount of segment `k` of pair `(i, j)`.
    Segments { n: usize, segments: Vec<Vec<f64>> },
}

impl AllocationData {
    pub fn encode(x: &Allocation) -> Self {
        match x {
            Allocation::Matrix(x) => AllocationData::Matrix(x.rows().into_iter().map(|r| r.to_vec()).collect()),
            Allocation::Segments { n, x } => AllocationData::Segments { n: *n, segments: x.clone() },
        }
    }

    /// Entry-level matrix, summing segment amounts.
    pub fn aggregate(&self) -> Result<Array2<f64>, CliError> {
        match self {
            AllocationData::Matrix(rows) => MatrixData::Dense(rows.clone()).decode(rows.len(), "allocation"),
            AllocationData::Segments { n, segments } => {
                if segments.len() != n * n {
                    return Err(CliError::Format(format!("allocation needs {} segment lists", n * n)));
                }
                Ok(Allocation::Segments { n: *n, x: segments.clone() }.aggregate())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub format_version: u32,
    pub algo: String,
    /// `null` when the market is infeasible.
    pub objective: Option<f64>,
    pub v: Vec<f64>,
    pub gap: Option<f64>,
    pub iterations: usize,
    pub time: f64,
    pub termination: String,
    pub allocation: AllocationData,
}

impl ResultFile {
    pub fn encode(algo: &str, r: &SolveResult) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        ResultFile {
            format_version: FORMAT_VERSION,
            algo: algo.to_string(),
            objective: finite(r.objective),
            v: r.v.clone(),
            gap: finite(r.gap),
            iterations: r.iterations,
            time: r.wall_time,
            termination: r.termination.as_str().to_string(),
            allocation: AllocationData::encode(&r.allocation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityCheck {
    pub max_difference: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryFile {
    pub format_version: u32,
    pub permutations: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<UtilityCheck>,
}

pub fn exit_code(t: Termination) -> i32 {
    match t {
        Termination::GapReached => 0,
        Termination::IterLimit | Termination::TimeLimit => 3,
        Termination::Infeasible => 4,
    }
}
