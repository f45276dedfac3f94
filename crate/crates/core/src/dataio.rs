//! Benchmark ingestion and binary persistence of models and pools.
//!
//! Containers start with an 8-byte magic, a little-endian `u32` version
//! and a kind byte, and end with a CRC-32 of everything before it. Reals
//! are little-endian `f64`, counts `u64`, strings length-prefixed UTF-8.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lica::LinearUnmixing;
use crate::mosaic::{Hyper, PairEval, PoolEntry, TesseraPool};
use crate::nn::{MlpConfig, MlpModel, TrainedMlp};
use crate::pair::{CausalPair, Cause, Point, Standardization, Standardizer};
use crate::tcl::TclModel;

const MAGIC: &[u8; 8] = b"CMOSAIC\0";
pub const FORMAT_VERSION: u32 = 1;
const KIND_MODEL: u8 = 1;
const KIND_POOL: u8 = 2;

/// One pair of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct TcepRecord {
    pub id: u32,
    /// Columns in file order with ground truth attached; `None` for
    /// multivariate records.
    pub pair: Option<CausalPair>,
    /// 1-based inclusive column spans from the metadata.
    pub cause_span: [usize; 2],
    pub effect_span: [usize; 2],
    pub weight: f64,
    pub multivariate: bool,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcepDataset {
    pub records: Vec<TcepRecord>,
    /// SHA-256 over the names and bytes of every file read.
    pub sha256: String,
}

impl TcepDataset {
    /// Bivariate pairs in id order.
    pub fn pairs(&self) -> Vec<CausalPair> {
        self.records.iter().filter_map(|r| r.pair.clone()).collect()
    }

    pub fn excluded(&self) -> usize {
        self.records.iter().filter(|r| r.multivariate).count()
    }
}

fn pair_file_id(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("pair")?.strip_suffix(".txt")?;
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "NaN" | "nan" | "NA" | "na" | "?" | "-")
}

/// Whitespace-separated numeric table. Rows with missing or non-finite
/// entries, or fewer than `min_cols` columns, are dropped and counted.
pub fn parse_table(path: &Path, text: &str, min_cols: usize) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (k, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_ascii_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(toks.len());
        let mut missing = false;
        for tok in &toks {
            if is_missing(tok) {
                missing = true;
                continue;
            }
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => missing = true,
                Err(_) => {
                    return Err(Error::Parse {
                        file: path.to_path_buf(),
                        line: k + 1,
                        msg: format!("non-numeric token {tok:?}"),
                    })
                }
            }
        }
        if missing || row.len() < min_cols {
            dropped += 1;
        } else {
            rows.push(row);
        }
    }
    Ok((rows, dropped))
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok((text, bytes))
}

/// Read a two-column pair file.
pub fn read_pair_file(path: &Path) -> Result<CausalPair> {
    let (text, _) = read_text(path)?;
    let (rows, dropped) = parse_table(path, &text, 2)?;
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    if rows.iter().any(|r| r.len() != 2) {
        return Err(Error::Dimension {
            expected: 2,
            got: rows.iter().map(Vec::len).find(|&l| l != 2).unwrap_or(0),
        });
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(CausalPair::new(id, rows.iter().map(|r| [r[0], r[1]]).collect()))
}

struct MetaRow {
    cause: [usize; 2],
    effect: [usize; 2],
    weight: f64,
}

fn parse_meta(path: &Path, text: &str) -> Result<BTreeMap<u32, MetaRow>> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_ascii_whitespace().collect();
        if toks.is_empty() || toks[0].starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        if toks.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", toks.len())));
        }
        let int = |t: &str| t.parse::<usize>().map_err(|_| err(format!("bad column index {t:?}")));
        let id = toks[0].parse::<u32>().map_err(|_| err(format!("bad pair id {:?}", toks[0])))?;
        let cause = [int(toks[1])?, int(toks[2])?];
        let effect = [int(toks[3])?, int(toks[4])?];
        let weight: f64 = toks[5].parse().map_err(|_| err(format!("bad weight {:?}", toks[5])))?;
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(err(format!("weight must be positive, got {weight}")));
        }
        if cause[0] == 0 || effect[0] == 0 || cause[0] > cause[1] || effect[0] > effect[1] {
            return Err(err("column spans must be 1-based and ordered".into()));
        }
        if out.insert(id, MetaRow { cause, effect, weight }).is_some() {
            return Err(err(format!("duplicate metadata for pair {id}")));
        }
    }
    Ok(out)
}

/// Load a benchmark directory: `pairNNNN.txt` files plus `pairmeta.txt`
/// rows `id cause_start cause_end effect_start effect_end weight`.
pub fn load_tcep(dir: &Path) -> Result<TcepDataset> {
    let meta_path = dir.join("pairmeta.txt");
    if !meta_path.is_file() {
        return Err(Error::Integrity(format!(
            "{} not found; download the cause-effect pairs benchmark and unpack it so that \
             pairmeta.txt and pair0001.txt ... sit in this directory",
            meta_path.display()
        )));
    }
    let mut files: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = pair_file_id(&name) {
            files.push((id, entry.path()));
        }
    }
    files.sort();

    let mut hasher = Sha256::new();
    let (meta_text, meta_bytes) = read_text(&meta_path)?;
    hasher.update(b"pairmeta.txt\0");
    hasher.update(&meta_bytes);
    let meta = parse_meta(&meta_path, &meta_text)?;

    for (id, path) in &files {
        if !meta.contains_key(id) {
            return Err(Error::Integrity(format!("{} has no metadata row", path.display())));
        }
    }
    for id in meta.keys() {
        if !files.iter().any(|(f, _)| f == id) {
            return Err(Error::Integrity(format!("metadata row {id} has no pair{id:04}.txt")));
        }
    }

    let mut records = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let m = &meta[id];
        let (text, bytes) = read_text(path)?;
        hasher.update(format!("pair{id:04}.txt\0").as_bytes());
        hasher.update(&bytes);
        let needed = m.cause[1].max(m.effect[1]);
        let (rows, dropped) = parse_table(path, &text, needed)?;
        if dropped > 0 {
            warn!("{}: dropped {dropped} rows with missing values", path.display());
        }
        let multivariate = m.cause[0] != m.cause[1] || m.effect[0] != m.effect[1];
        let pair = if multivariate {
            None
        } else {
            let (c, e) = (m.cause[0] - 1, m.effect[0] - 1);
            if c == e {
                return Err(Error::Integrity(format!("pair {id}: cause and effect share column {}", c + 1)));
            }
            let (a, b) = (c.min(e), c.max(e));
            let cause = if c < e { Cause::X1 } else { Cause::X2 };
            let points: Vec<Point> = rows.iter().map(|r| [r[a], r[b]]).collect();
            Some(
                CausalPair::new(format!("{id:04}"), points)
                    .with_cause(cause)
                    .with_weight(m.weight),
            )
        };
        records.push(TcepRecord {
            id: *id,
            pair,
            cause_span: m.cause,
            effect_span: m.effect,
            weight: m.weight,
            multivariate,
            dropped_rows: dropped,
        });
    }
    let sha256 = hasher.finalize().iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    });
    Ok(TcepDataset { records, sha256 })
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u8) -> Writer {
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(kind);
        Writer { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Check magic, checksum, version and kind; position after the header.
    fn open(bytes: &'a [u8], kind: u8) -> Result<Reader<'a>> {
        let header = MAGIC.len() + 5;
        if bytes.len() < header + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a model container (bad magic or truncated)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checksum mismatch: the file is corrupted or truncated".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}, expected {FORMAT_VERSION}"
            )));
        }
        if body[12] != kind {
            return Err(Error::Format(format!("container holds kind {}, expected {kind}", body[12])));
        }
        Ok(Reader { buf: body, pos: header })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Format("length overflow".into()))?;
        if n > self.buf.len() {
            return Err(Error::Format("implausible length".into()));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format("trailing bytes after payload".into()))
        }
    }
}

fn std_code(s: Standardization) -> u8 {
    match s {
        Standardization::PerPair => 0,
        Standardization::Pooled => 1,
        Standardization::None => 2,
    }
}

fn std_from(code: u8) -> Result<Standardization> {
    match code {
        0 => Ok(Standardization::PerPair),
        1 => Ok(Standardization::Pooled),
        2 => Ok(Standardization::None),
        c => Err(Error::Format(format!("unknown standardization code {c}"))),
    }
}

fn write_model(w: &mut Writer, m: &TclModel) {
    w.str(&m.id);
    w.str(&toml::to_string(m.mlp.model.config()).expect("architecture serializes"));
    w.u64(m.mlp.model.n_classes() as u64);
    w.f64s(m.mlp.model.params());
    w.u8(std_code(m.mlp.standardization));
    for v in m.mlp.pooled.mean.iter().chain(&m.mlp.pooled.scale) {
        w.f64(*v);
    }
    w.f64(m.mlp.train_accuracy);
    w.u64(m.training_ids.len() as u64);
    for id in &m.training_ids {
        w.str(id);
    }
    match &m.unmixing {
        None => w.u8(0),
        Some(u) => {
            w.u8(1);
            for v in u.mean.iter().chain(u.whitening.iter().flatten()).chain(u.rotation.iter().flatten()) {
                w.f64(*v);
            }
            w.u8(u.converged as u8);
            w.u64(u.iterations as u64);
        }
    }
}

fn read_model(r: &mut Reader) -> Result<TclModel> {
    let id = r.str()?;
    let cfg: MlpConfig = toml::from_str(&r.str()?).map_err(|e| Error::Format(format!("architecture: {e}")))?;
    let n_classes = r.len()?;
    let params = r.f64s()?;
    let model = MlpModel::from_params(&cfg, n_classes, params)?;
    let standardization = std_from(r.u8()?)?;
    let mut f4 = [0.0; 4];
    for v in &mut f4 {
        *v = r.f64()?;
    }
    let pooled = Standardizer {
        mean: [f4[0], f4[1]],
        scale: [f4[2], f4[3]],
    };
    let train_accuracy = r.f64()?;
    let n_ids = r.len()?;
    let training_ids = (0..n_ids).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let unmixing = match r.u8()? {
        0 => None,
        1 => {
            let mut v = [0.0; 10];
            for x in &mut v {
                *x = r.f64()?;
            }
            Some(LinearUnmixing {
                mean: [v[0], v[1]],
                whitening: [[v[2], v[3]], [v[4], v[5]]],
                rotation: [[v[6], v[7]], [v[8], v[9]]],
                converged: r.u8()? != 0,
                iterations: r.len()?,
            })
        }
        c => return Err(Error::Format(format!("bad unmixing flag {c}"))),
    };
    Ok(TclModel {
        id,
        mlp: TrainedMlp {
            model,
            standardization,
            pooled,
            train_accuracy,
            losses: Vec::new(),
        },
        training_ids,
        unmixing,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn model_to_bytes(m: &TclModel) -> Vec<u8> {
    let mut w = Writer::new(KIND_MODEL);
    write_model(&mut w, m);
    w.finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TclModel> {
    let mut r = Reader::open(bytes, KIND_MODEL)?;
    let m = read_model(&mut r)?;
    r.done()?;
    Ok(m)
}

/// Loss traces are not stored.
pub fn save_model(path: &Path, m: &TclModel) -> Result<()> {
    write_bytes(path, &model_to_bytes(m))
}

pub fn load_model(path: &Path) -> Result<TclModel> {
    model_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn write_hyper(w: &mut Writer, h: &Hyper) {
    w.u64(h.depth as u64);
    w.u64(h.width as u64);
    w.f64(h.learning_rate);
    w.f64(h.momentum);
    w.u64(h.batch_size as u64);
    w.u64(h.max_steps as u64);
    w.f64(h.decay_factor);
}

fn read_hyper(r: &mut Reader) -> Result<Hyper> {
    Ok(Hyper {
        depth: r.len()?,
        width: r.len()?,
        learning_rate: r.f64()?,
        momentum: r.f64()?,
        batch_size: r.len()?,
        max_steps: r.len()?,
        decay_factor: r.f64()?,
    })
}

pub fn pool_to_bytes(pool: &TesseraPool) -> Vec<u8> {
    let mut w = Writer::new(KIND_POOL);
    w.u64(pool.pair_ids.len() as u64);
    for (id, c) in pool.pair_ids.iter().zip(&pool.truth) {
        w.str(id);
        w.u8(c.index() as u8);
    }
    w.u64(pool.entries.len() as u64);
    for (e, ev) in pool.entries.iter().zip(&pool.evals) {
        w.u64(e.set.len() as u64);
        for &s in &e.set {
            w.u64(s as u64);
        }
        w.f64(e.cacc);
        w.u64(e.seed);
        match &e.hyper {
            None => w.u8(0),
            Some(h) => {
                w.u8(1);
                write_hyper(&mut w, h);
            }
        }
        match &e.model {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                write_model(&mut w, m);
            }
        }
        w.u64(ev.len() as u64);
        for p in ev {
            w.f64(p.w1);
            w.f64(p.w2);
        }
    }
    w.finish()
}

/// The derived accuracy tables are recomputed from the stored evaluations.
pub fn pool_from_bytes(bytes: &[u8]) -> Result<TesseraPool> {
    let mut r = Reader::open(bytes, KIND_POOL)?;
    let n_pairs = r.len()?;
    let mut ids = Vec::with_capacity(n_pairs);
    let mut truth = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        ids.push(r.str()?);
        truth.push(Cause::from_index(r.u8()? as usize).ok_or_else(|| Error::Format("bad cause".into()))?);
    }
    let n = r.len()?;
    let mut entries = Vec::with_capacity(n);
    let mut evals = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.len()?;
        let set = (0..k)
            .map(|_| {
                let s = r.len()?;
                if s < n_pairs {
                    Ok(s)
                } else {
                    Err(Error::Format(format!("set index {s} out of range")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let cacc = r.f64()?;
        let seed = r.u64()?;
        let hyper = match r.u8()? {
            0 => None,
            _ => Some(read_hyper(&mut r)?),
        };
        let model = match r.u8()? {
            0 => None,
            _ => Some(read_model(&mut r)?),
        };
        let m = r.len()?;
        if m != 0 && m != n_pairs {
            return Err(Error::Format(format!("evaluation row of {m} entries for {n_pairs} pairs")));
        }
        let ev = (0..m)
            .map(|_| Ok(PairEval { w1: r.f64()?, w2: r.f64()? }))
            .collect::<Result<Vec<_>>>()?;
        entries.push(PoolEntry {
            set,
            model,
            cacc,
            hyper,
            seed,
        });
        evals.push(ev);
    }
    r.done()?;
    Ok(TesseraPool::from_tables(ids, truth, entries, evals))
}

pub fn save_pool(path: &Path, pool: &TesseraPool) -> Result<()> {
    write_bytes(path, &pool_to_bytes(pool))
}

pub fn load_pool(path: &Path) -> Result<TesseraPool> {
    pool_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One tab-separated record per model: location, training ids, accuracies,
/// hyperparameters and seed.
pub fn pool_manifest(pool: &TesseraPool, pool_file: &str) -> String {
    let mut out = String::from(
        "index\tmodel\ttraining_ids\tcacc\ttacc\tw_n\tseed\tdepth\twidth\tlearning_rate\tmomentum\tbatch_size\tmax_steps\tdecay_factor\n",
    );
    for (n, e) in pool.entries.iter().enumerate() {
        let ids: Vec<&str> = e.set.iter().map(|&s| pool.pair_ids[s].as_str()).collect();
        let model = if e.model.is_some() {
            format!("{pool_file}#{n}")
        } else {
            "-".into()
        };
        let hyper = e.hyper.map_or_else(
            || "-\t-\t-\t-\t-\t-\t-".to_string(),
            |h| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    h.depth, h.width, h.learning_rate, h.momentum, h.batch_size, h.max_steps, h.decay_factor
                )
            },
        );
        writeln!(
            out,
            "{n}\t{model}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{hyper}",
            ids.join(","),
            e.cacc,
            pool.tacc[n],
            pool.w_n[n],
            e.seed
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{OutputActivation, TrainConfig};
    use crate::pair::InputOrder;
    use crate::synth::{export_pairs, generate_pairs, sample_mixing, SourceSpec};
    use crate::tcl::fit_tessera;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn metadata_conventions() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "pairmeta.txt", "1 1 1 2 2 1.0\n2 2 2 1 1 0.5\n3 1 2 3 3 1\n");
        write(d.path(), "pair0001.txt", "1.0 2.0\n3e-1\t4\n  5 NaN\n");
        write(d.path(), "pair0002.txt", "1 2\n3 4\n");
        write(d.path(), "pair0003.txt", "1 2 3\n4 5 6\n");
        write(d.path(), "pair0001_des.txt", "description, ignored\n");
        let ds = load_tcep(d.path()).unwrap();
        assert_eq!(ds.records.len(), 3);
        let r1 = &ds.records[0];
        assert!(!r1.multivariate);
        assert_eq!(r1.dropped_rows, 1);
        let p1 = r1.pair.as_ref().unwrap();
        assert_eq!(p1.points, vec![[1.0, 2.0], [0.3, 4.0]]);
        assert_eq!(p1.cause, Some(Cause::X1));
        let p2 = ds.records[1].pair.as_ref().unwrap();
        assert_eq!(p2.cause, Some(Cause::X2));
        assert_eq!(p2.weight, 0.5);
        assert!(ds.records[2].multivariate);
        assert_eq!(ds.excluded(), 1);
        assert_eq!(ds.pairs().len(), 2);
        assert_eq!(ds.sha256.len(), 64);
    }

    #[test]
    fn integrity_and_parse_errors() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(load_tcep(d.path()), Err(Error::Integrity(_))));
        write(d.path(), "pairmeta.txt", "1 1 1 2 2 1\n");
        write(d.path(), "pair0001.txt", "1 2\n");
        write(d.path(), "pair0002.txt", "1 2\n");
        assert!(matches!(load_tcep(d.path()), Err(Error::Integrity(_))));
        fs::remove_file(d.path().join("pair0002.txt")).unwrap();
        write(d.path(), "pair0001.txt", "1 2\n3 abc\n");
        match load_tcep(d.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        write(d.path(), "pairmeta.txt", "1 1 1 2 2 1\n2 1 1 2 2 1\n");
        write(d.path(), "pair0001.txt", "1 2\n");
        assert!(matches!(load_tcep(d.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn exported_pairs_round_trip() {
        let net = sample_mixing(3, 5, 0.2, 1.0, true).unwrap();
        let spec = SourceSpec::log_uniform(3, 0.3, 3.0, 4);
        let gen = generate_pairs(&net, &spec, 40, 5).unwrap();
        let mut pairs: Vec<CausalPair> = gen.iter().map(|g| g.to_causal_pair()).collect();
        pairs[1] = pairs[1].reordered(InputOrder::Swapped).with_weight(0.25);
        let d = tempfile::tempdir().unwrap();
        export_pairs(d.path(), &pairs, &spec.scales, 3, 4).unwrap();
        let back = load_tcep(d.path()).unwrap().pairs();
        assert_eq!(back, pairs);
    }

    fn small_model(seed: u64) -> (TclModel, Vec<CausalPair>) {
        let net = sample_mixing(seed, 3, 0.2, 1.0, true).unwrap();
        let spec = SourceSpec::log_uniform(3, 0.3, 3.0, seed + 1);
        let pairs: Vec<CausalPair> = generate_pairs(&net, &spec, 100, seed)
            .unwrap()
            .iter()
            .map(|g| g.to_causal_pair())
            .collect();
        let mlp = MlpConfig {
            output_activation: OutputActivation::Maxout,
            ..MlpConfig::structural(2, 6)
        };
        let train = TrainConfig {
            max_steps: 30,
            seed,
            ..TrainConfig::default()
        };
        (fit_tessera(format!("m{seed}"), &pairs, &mlp, &train).unwrap(), pairs)
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let (m, pairs) = small_model(1);
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("m.bin");
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        let bits = |x: &TclModel| x.mlp.model.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(back.unmixing, m.unmixing);
        let a = m.hica(&pairs[0].points, InputOrder::Swapped).unwrap();
        let b = back.hica(&pairs[0].points, InputOrder::Swapped).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_and_foreign_files_rejected() {
        let (m, _) = small_model(2);
        let mut bytes = model_to_bytes(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
        let good = model_to_bytes(&m);
        assert!(model_from_bytes(&good[..good.len() - 9]).is_err());
        // a well-formed container of a future version
        let mut v2 = good[..good.len() - 4].to_vec();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        let crc = crc32fast::hash(&v2);
        v2.extend_from_slice(&crc.to_le_bytes());
        match model_from_bytes(&v2) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("{other:?}"),
        }
        assert!(pool_from_bytes(&good).is_err());
    }

    #[test]
    fn pool_round_trip() {
        let empty = TesseraPool::from_tables(Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let back = pool_from_bytes(&pool_to_bytes(&empty)).unwrap();
        assert!(back.is_empty());

        let models: Vec<(TclModel, Vec<CausalPair>)> = (10..13).map(small_model).collect();
        let pairs = models[0].1.clone();
        let entries: Vec<PoolEntry> = models
            .iter()
            .enumerate()
            .map(|(n, (m, _))| PoolEntry {
                set: vec![n],
                model: Some(m.clone()),
                cacc: 0.5,
                hyper: None,
                seed: n as u64,
            })
            .collect();
        let pool = TesseraPool::evaluate(&pairs, entries, crate::indep::DindepKind::DcorComplement).unwrap();
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("pool.bin");
        save_pool(&path, &pool).unwrap();
        let back = load_pool(&path).unwrap();
        assert_eq!(back.tacc, pool.tacc);
        assert_eq!(back.vacc, pool.vacc);
        assert_eq!(back.evals, pool.evals);
        for (a, b) in pool.entries.iter().zip(&back.entries) {
            let (a, b) = (a.model.as_ref().unwrap(), b.model.as_ref().unwrap());
            assert_eq!(a.mlp.model.features(&pairs[1].points), b.mlp.model.features(&pairs[1].points));
        }
        let manifest = pool_manifest(&back, "pool.bin");
        assert_eq!(manifest.lines().count(), 4);
        assert!(manifest.contains("pool.bin#2"));
    }

    #[test]
    fn pair_file_reader() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.txt");
        fs::write(&p, "1 2\n3 4\n").unwrap();
        assert_eq!(read_pair_file(&p).unwrap().points, vec![[1.0, 2.0], [3.0, 4.0]]);
        fs::write(&p, "1 2 3\n").unwrap();
        assert!(read_pair_file(&p).is_err());
        assert!(read_pair_file(&d.path().join("missing.txt")).is_err());
    }
}
