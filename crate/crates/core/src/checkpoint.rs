//! Plain-text run checkpoints.
//!
//! One `key values...` record per line. Every `f64` is stored as the 16-digit
//! hex of its bit pattern, so a save/load round trip is exact and a resumed
//! run continues bit for bit.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Model, Network, NetworkConfig};
use crate::predictor::{FitBuffer, FitInfo, FitSample, Predictor, ScalarPredictor, StructuredPredictor};
use crate::rng::RngState;
use crate::trainer::{Algorithm, BudgetLedger, OptimizerState, RunState};

const MAGIC: &str = "gradpred-checkpoint";
const FORMAT_VERSION: u32 = 1;

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn hex_list(values: &[f64]) -> String {
    let mut s = values.len().to_string();
    for v in values {
        s.push(' ');
        s.push_str(&hex(*v));
    }
    s
}

fn matrix_line(m: &Matrix) -> String {
    format!("{} {} {}", m.rows(), m.cols(), hex_list(m.as_slice()))
}

fn rng_line(state: &RngState) -> String {
    let seed: String = state.seed.iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed} {} {}", state.stream, state.word_pos)
}

pub fn write_checkpoint<W: Write>(state: &RunState<Network>, mut out: W) -> Result<()> {
    let net = &state.model;
    let cfg = net.config();
    let mut lines = vec![
        format!("{MAGIC} {FORMAT_VERSION}"),
        format!("algorithm {}", state.algorithm),
        format!("network.input_dim {}", cfg.input_dim),
        format!(
            "network.hidden {}",
            cfg.hidden_widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        ),
        format!("network.output_dim {}", cfg.output_dim),
        format!("network.activation {}", cfg.activation),
        format!("network.seed {}", cfg.seed),
        format!("network.version {}", net.version()),
        format!("network.params {}", hex_list(&net.params())),
        format!("optimizer.buffer {}", hex_list(&state.optimizer.buffer)),
        format!(
            "ledger {} {} {} {}",
            state.ledger.forward,
            state.ledger.cheap_forward,
            state.ledger.backward,
            hex(state.ledger.cost_units)
        ),
        format!("step {}", state.step),
        format!("epoch {}", state.epoch),
        format!(
            "order {}",
            std::iter::once(state.order.len().to_string())
                .chain(state.order.iter().map(usize::to_string))
                .collect::<Vec<_>>()
                .join(" ")
        ),
        format!("cursor {}", state.cursor),
        format!("warmup_done {}", u8::from(state.warmup_done)),
        format!("last_val {}", hex(state.last_val)),
        format!("rng.shuffle {}", rng_line(&RngState::capture(&state.shuffle_rng))),
        format!("rng.split {}", rng_line(&RngState::capture(&state.split_rng))),
    ];
    match &state.predictor {
        None => lines.push("predictor none".into()),
        Some(p) => {
            let info = p.info();
            let info_line = format!(
                "predictor.info {} {} {} {}",
                info.samples_used,
                hex(info.lambda),
                info.step,
                hex(info.captured_mass)
            );
            match p {
                Predictor::Scalar(s) => {
                    lines.push("predictor scalar".into());
                    lines.push(info_line);
                    lines.push(format!("predictor.m {}", matrix_line(&s.m)));
                }
                Predictor::Structured(s) => {
                    lines.push("predictor structured".into());
                    lines.push(info_line);
                    lines.push(format!("predictor.u {}", matrix_line(&s.u)));
                    lines.push(format!("predictor.rank {}", s.s.len()));
                    for si in &s.s {
                        lines.push(format!("predictor.s {}", matrix_line(si)));
                    }
                }
            }
        }
    }
    lines.push(format!("buffer {} {}", state.buffer.capacity(), state.buffer.len()));
    for s in state.buffer.iter() {
        lines.push(format!("sample.llh {}", hex_list(&s.llh)));
        lines.push(format!("sample.residual {}", hex_list(&s.residual)));
        lines.push(format!("sample.h {}", hex_list(&s.h)));
        lines.push(format!("sample.trunk {}", hex_list(&s.trunk_grad)));
    }
    lines.push("end".into());
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_checkpoint(state: &RunState<Network>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(state, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<RunState<Network>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(BufReader::new(file))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn bad(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line_no))
    }

    /// Tokens after `key` on the next line.
    fn next(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self
            .inner
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {key:?}")))??;
        self.line_no += 1;
        let mut tokens = line.split_whitespace().map(str::to_string);
        match tokens.next() {
            Some(k) if k == key => Ok(tokens.collect()),
            other => Err(self.bad(format!("expected {key:?}, found {other:?}"))),
        }
    }

    fn one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let t = self.next(key)?;
        if t.len() != 1 {
            return Err(self.bad(format!("{key} takes one value")));
        }
        self.parse(&t[0])
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.bad(format!("cannot parse {s:?}")))
    }

    fn float(&self, s: &str) -> Result<f64> {
        u64::from_str_radix(s, 16)
            .map(f64::from_bits)
            .map_err(|_| self.bad(format!("bad float {s:?}")))
    }

    fn list_from(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let n: usize = self.parse(tokens.first().ok_or_else(|| self.bad("missing length"))?)?;
        if tokens.len() != n + 1 {
            return Err(self.bad(format!("expected {n} values, found {}", tokens.len() - 1)));
        }
        tokens[1..].iter().map(|t| self.float(t)).collect()
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>> {
        let t = self.next(key)?;
        self.list_from(&t)
    }

    fn matrix(&mut self, key: &str) -> Result<Matrix> {
        let t = self.next(key)?;
        if t.len() < 2 {
            return Err(self.bad("matrix needs rows and cols"));
        }
        let rows: usize = self.parse(&t[0])?;
        let cols: usize = self.parse(&t[1])?;
        let data = self.list_from(&t[2..])?;
        Matrix::from_vec(rows, cols, data).map_err(|e| self.bad(e))
    }

    fn rng(&mut self, key: &str) -> Result<crate::rng::Rng> {
        let t = self.next(key)?;
        if t.len() != 3 || t[0].len() != 64 {
            return Err(self.bad("rng state needs seed, stream and word position"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&t[0][2 * i..2 * i + 2], 16).map_err(|_| self.bad("bad rng seed"))?;
        }
        Ok(RngState {
            seed,
            stream: self.parse(&t[1])?,
            word_pos: self.parse(&t[2])?,
        }
        .restore())
    }
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<RunState<Network>> {
    let mut r = Lines {
        inner: input.lines(),
        line_no: 0,
    };
    let version: u32 = r.one(MAGIC)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let algorithm: Algorithm = r.one::<String>("algorithm")?.parse()?;
    let input_dim = r.one("network.input_dim")?;
    let hidden_widths = r
        .next("network.hidden")?
        .iter()
        .map(|t| r.parse(t))
        .collect::<Result<Vec<usize>>>()?;
    let output_dim = r.one("network.output_dim")?;
    let activation = r.one::<String>("network.activation")?.parse()?;
    let seed = r.one("network.seed")?;
    let net_version: u64 = r.one("network.version")?;
    let config = NetworkConfig {
        input_dim,
        hidden_widths,
        output_dim,
        activation,
        seed,
    };
    let params = r.list("network.params")?;
    let mut model = Network::zeros(config)?;
    model.set_params(&params)?;
    model.set_version(net_version);

    let optimizer = OptimizerState {
        buffer: r.list("optimizer.buffer")?,
    };
    let l = r.next("ledger")?;
    if l.len() != 4 {
        return Err(r.bad("ledger needs four fields"));
    }
    let ledger = BudgetLedger {
        forward: r.parse(&l[0])?,
        cheap_forward: r.parse(&l[1])?,
        backward: r.parse(&l[2])?,
        cost_units: r.float(&l[3])?,
    };
    let step = r.one("step")?;
    let epoch = r.one("epoch")?;
    let o = r.next("order")?;
    let n: usize = r.parse(o.first().ok_or_else(|| r.bad("missing order length"))?)?;
    if o.len() != n + 1 {
        return Err(r.bad("order length mismatch"));
    }
    let order = o[1..].iter().map(|t| r.parse(t)).collect::<Result<Vec<usize>>>()?;
    let cursor = r.one("cursor")?;
    let warmup_done = r.one::<u8>("warmup_done")? != 0;
    let last_val = {
        let t = r.next("last_val")?;
        r.float(t.first().ok_or_else(|| r.bad("missing value"))?)?
    };
    let shuffle_rng = r.rng("rng.shuffle")?;
    let split_rng = r.rng("rng.split")?;

    let kind: String = r.one("predictor")?;
    let predictor = match kind.as_str() {
        "none" => None,
        "scalar" | "structured" => {
            let t = r.next("predictor.info")?;
            if t.len() != 4 {
                return Err(r.bad("predictor.info needs four fields"));
            }
            let info = FitInfo {
                samples_used: r.parse(&t[0])?,
                lambda: r.float(&t[1])?,
                step: r.parse(&t[2])?,
                captured_mass: r.float(&t[3])?,
            };
            if kind == "scalar" {
                Some(Predictor::Scalar(ScalarPredictor {
                    m: r.matrix("predictor.m")?,
                    info,
                }))
            } else {
                let u = r.matrix("predictor.u")?;
                let rank: usize = r.one("predictor.rank")?;
                let s = (0..rank).map(|_| r.matrix("predictor.s")).collect::<Result<Vec<_>>>()?;
                Some(Predictor::Structured(StructuredPredictor { u, s, info }))
            }
        }
        other => return Err(r.bad(format!("unknown predictor kind {other:?}"))),
    };
    if let Some(p) = &predictor {
        if p.trunk_len() != model.trunk_len() {
            return Err(r.bad("predictor does not match the network"));
        }
    }

    let b = r.next("buffer")?;
    if b.len() != 2 {
        return Err(r.bad("buffer needs capacity and length"));
    }
    let mut buffer = FitBuffer::new(r.parse(&b[0])?);
    let len: usize = r.parse(&b[1])?;
    for _ in 0..len {
        buffer.push(FitSample {
            llh: r.list("sample.llh")?,
            residual: r.list("sample.residual")?,
            h: r.list("sample.h")?,
            trunk_grad: r.list("sample.trunk")?,
        });
    }
    r.next("end")?;

    Ok(RunState {
        algorithm,
        model,
        optimizer,
        predictor,
        buffer,
        ledger,
        step,
        epoch,
        order,
        cursor,
        shuffle_rng,
        split_rng,
        warmup_done,
        last_val,
    })
}
