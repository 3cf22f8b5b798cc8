use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossKind;

pub const RESULT_COLUMNS: [&str; 16] = [
    "experiment",
    "loss",
    "D",
    "gamma_th",
    "snr_db",
    "q_th",
    "retrain_index",
    "gfp",
    "gfp_se",
    "bop",
    "bop_se",
    "obop",
    "anar",
    "sel_fail_rate",
    "n_test",
    "master_seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RetrainIndex {
    Run(usize),
    Mean,
}

impl fmt::Display for RetrainIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrainIndex::Run(i) => write!(f, "{i}"),
            RetrainIndex::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for RetrainIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(RetrainIndex::Mean);
        }
        s.parse()
            .map(RetrainIndex::Run)
            .map_err(|_| Error::Input(format!("bad retrain_index {s:?}")))
    }
}

/// One line of the results CSV. `sel_fail_rate` is the selection-failure
/// rate among samples that passed the gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub loss: LossKind,
    pub d: usize,
    pub gamma_th: f64,
    pub snr_db: f64,
    pub q_th: f64,
    pub retrain: RetrainIndex,
    pub gfp: f64,
    pub gfp_se: f64,
    pub bop: f64,
    pub bop_se: f64,
    pub obop: f64,
    pub anar: f64,
    pub sel_fail_rate: f64,
    pub n_test: u64,
    pub master_seed: u64,
}

/// `%.6g`-style formatting: six significant digits, trailing zeros removed,
/// independent of locale.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_float(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Input(format!("bad number {s:?}"))),
    }
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.loss.to_string(),
            self.d.to_string(),
            format_sig6(self.gamma_th),
            format_sig6(self.snr_db),
            format_sig6(self.q_th),
            self.retrain.to_string(),
            format_sig6(self.gfp),
            format_sig6(self.gfp_se),
            format_sig6(self.bop),
            format_sig6(self.bop_se),
            format_sig6(self.obop),
            format_sig6(self.anar),
            format_sig6(self.sel_fail_rate),
            self.n_test.to_string(),
            self.master_seed.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != RESULT_COLUMNS.len() {
            return Err(Error::Input(format!(
                "expected {} columns, found {}",
                RESULT_COLUMNS.len(),
                rec.len()
            )));
        }
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Input(format!("bad {} value {:?}", RESULT_COLUMNS[i], &rec[i])))
        };
        Ok(ResultRow {
            experiment: rec[0].to_string(),
            loss: rec[1].parse()?,
            d: int(2)? as usize,
            gamma_th: parse_float(&rec[3])?,
            snr_db: parse_float(&rec[4])?,
            q_th: parse_float(&rec[5])?,
            retrain: rec[6].parse()?,
            gfp: parse_float(&rec[7])?,
            gfp_se: parse_float(&rec[8])?,
            bop: parse_float(&rec[9])?,
            bop_se: parse_float(&rec[10])?,
            obop: parse_float(&rec[11])?,
            anar: parse_float(&rec[12])?,
            sel_fail_rate: parse_float(&rec[13])?,
            n_test: int(14)?,
            master_seed: int(15)?,
        })
    }
}

/// Header plus rows, LF line endings.
pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| Error::io("<results csv>", e))?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(Error::Input(format!("unexpected results header: {header:?}")));
    }
    r.records()
        .map(|rec| ResultRow::from_record(&rec?))
        .collect()
}
