//! Plain-text checkpoint format.
//!
//! ```text
//! aotsnn-checkpoint 1
//! config_hash <hex>
//! shape <inputs> <hidden> <outputs>
//! threshold <f64 bits as hex>
//! leak learnable|accumulate
//! param <name> <rows> <cols> <row-major f64 bits as hex...>
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so a load reproduces
//! every parameter exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore};

use super::layers::ReadoutLeak;
use super::network::{NetShape, Network};

const MAGIC: &str = "aotsnn-checkpoint 1";

pub fn encode(net: &Network, config_hash: &str) -> String {
    let mut out = String::new();
    let s = net.shape();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "config_hash {config_hash}").unwrap();
    writeln!(out, "shape {} {} {}", s.inputs, s.hidden, s.outputs).unwrap();
    writeln!(out, "threshold {:016x}", net.threshold().to_bits()).unwrap();
    let leak = match net.leak() {
        ReadoutLeak::Learnable => "learnable",
        ReadoutLeak::Accumulate => "accumulate",
    };
    writeln!(out, "leak {leak}").unwrap();
    for slot in net.params().slots() {
        let (r, c) = slot.value.shape();
        write!(out, "param {} {r} {c}", slot.name).unwrap();
        for v in slot.value.as_slice() {
            write!(out, " {:016x}", v.to_bits()).unwrap();
        }
        out.push('\n');
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("checkpoint: {}", msg.into()))
}

fn hex_f64(tok: &str) -> Result<f64> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| bad(format!("bad value '{tok}'")))
}

fn num<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad integer field"))
}

/// Parses a checkpoint, returning the network and the embedded config hash.
pub fn decode(text: &str) -> Result<(Network, String)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header"));
    }
    let mut hash = None;
    let mut shape = None;
    let mut threshold = None;
    let mut leak = None;
    let mut params = ParamStore::new();
    for line in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("config_hash") => hash = Some(toks.next().unwrap_or_default().to_string()),
            Some("shape") => {
                shape = Some(NetShape {
                    inputs: num(toks.next())?,
                    hidden: num(toks.next())?,
                    outputs: num(toks.next())?,
                })
            }
            Some("threshold") => threshold = Some(hex_f64(toks.next().unwrap_or_default())?),
            Some("leak") => {
                leak = Some(match toks.next() {
                    Some("learnable") => ReadoutLeak::Learnable,
                    Some("accumulate") => ReadoutLeak::Accumulate,
                    other => return Err(bad(format!("unknown leak {other:?}"))),
                })
            }
            Some("param") => {
                let name = toks.next().ok_or_else(|| bad("param without name"))?;
                let rows: usize = num(toks.next())?;
                let cols: usize = num(toks.next())?;
                let values = toks.map(hex_f64).collect::<Result<Vec<_>>>()?;
                let m =
                    Matrix::from_vec(rows, cols, values).map_err(|_| bad(format!("wrong value count for {name}")))?;
                params.add(name, m);
            }
            Some(other) => return Err(bad(format!("unknown record '{other}'"))),
            None => {}
        }
    }
    let net = Network::from_params(
        shape.ok_or_else(|| bad("missing shape"))?,
        params,
        threshold.ok_or_else(|| bad("missing threshold"))?,
        leak.ok_or_else(|| bad("missing leak"))?,
    )?;
    Ok((net, hash.ok_or_else(|| bad("missing config_hash"))?))
}

pub fn save(path: &Path, net: &Network, config_hash: &str) -> Result<()> {
    std::fs::write(path, encode(net, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Network, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}
