//! `GANRX-NN1` model files: magic, a little-endian u32 header length, a
//! UTF-8 `key=value` header describing the layers, then every parameter as
//! f32 little-endian in layer order (batch norm: γ, β, running mean,
//! running variance).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{read_all, write_atomic};

use super::layer::{LayerKind, LayerSpec, Shape};
use super::network::{Mode, Network};
use super::Real;

pub const NETWORK_MAGIC: &[u8; 9] = b"GANRX-NN1";
const VERSION: u32 = 1;

fn header<T: Real>(net: &Network<T>) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "version={VERSION}");
    let _ = writeln!(h, "mode={}", net.mode().name());
    let _ = writeln!(h, "input={}", net.input_shape());
    let _ = writeln!(h, "signal_len={}", net.signal_len());
    let _ = writeln!(h, "layers={}", net.specs().len());
    for s in net.specs() {
        let _ = writeln!(
            h,
            "layer={} kernel={} stride={} padding={} in={} out={} slope={}",
            s.kind, s.kernel, s.stride, s.padding, s.in_channels, s.out_channels, s.negative_slope
        );
    }
    h
}

pub fn encode_network<T: Real>(net: &Network<T>) -> Vec<u8> {
    let header = header(net);
    let mut out = NETWORK_MAGIC.to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let mut push = |vals: &[T]| {
        for v in vals {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    };
    for layer in 0..net.specs().len() {
        for p in net.layer_params(layer) {
            push(p.data());
        }
        if let Some((mean, var)) = net.running_stats(layer) {
            push(mean);
            push(var);
        }
    }
    out
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Format(format!("{key}: expected unsigned integer, got {v:?}")))
}

fn parse_shape(v: &str) -> Result<Shape> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        ["seq", c, l] => Ok(Shape::seq(parse_usize("input", c)?, parse_usize("input", l)?)),
        ["flat", n] => Ok(Shape::Flat(parse_usize("input", n)?)),
        _ => Err(Error::Format(format!("bad input shape {v:?}"))),
    }
}

fn parse_layer(v: &str) -> Result<LayerSpec> {
    let mut tokens = v.split_whitespace();
    let kind: LayerKind = tokens
        .next()
        .ok_or_else(|| Error::Format("empty layer line".into()))?
        .parse()?;
    let mut spec = LayerSpec::tanh();
    spec.kind = kind;
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad layer field {token:?}")))?;
        match key {
            "kernel" => spec.kernel = parse_usize(key, value)?,
            "stride" => spec.stride = parse_usize(key, value)?,
            "padding" => spec.padding = parse_usize(key, value)?,
            "in" => spec.in_channels = parse_usize(key, value)?,
            "out" => spec.out_channels = parse_usize(key, value)?,
            "slope" => {
                spec.negative_slope = value
                    .parse()
                    .map_err(|_| Error::Format(format!("bad slope {value:?}")))?
            }
            _ => return Err(Error::Format(format!("unknown layer field {key:?}"))),
        }
    }
    Ok(spec)
}

pub fn decode_network<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let magic_len = NETWORK_MAGIC.len();
    if bytes.len() < magic_len + 4 || &bytes[..magic_len] != NETWORK_MAGIC {
        return Err(Error::Format("missing GANRX-NN1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[magic_len..magic_len + 4].try_into().unwrap()) as usize;
    let start = magic_len + 4;
    let end = start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated network header".into()))?;
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::Format("network header is not UTF-8".into()))?;

    let mut version = None;
    let mut mode = None;
    let mut input = None;
    let mut signal_len = None;
    let mut declared = None;
    let mut specs = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        match key {
            "version" => version = Some(parse_usize(key, value)?),
            "mode" => {
                mode = Some(match value {
                    "train" => Mode::Train,
                    "eval" => Mode::Eval,
                    _ => return Err(Error::Format(format!("bad mode {value:?}"))),
                })
            }
            "input" => input = Some(parse_shape(value)?),
            "signal_len" => signal_len = Some(parse_usize(key, value)?),
            "layers" => declared = Some(parse_usize(key, value)?),
            "layer" => specs.push(parse_layer(value)?),
            _ => return Err(Error::Format(format!("unknown header key {key:?}"))),
        }
    }
    if version != Some(VERSION as usize) {
        return Err(Error::Format(format!("unsupported network version {version:?}")));
    }
    let missing = |k: &str| Error::Format(format!("missing header key {k:?}"));
    let input = input.ok_or_else(|| missing("input"))?;
    if declared != Some(specs.len()) {
        return Err(Error::Format(format!(
            "header declares {declared:?} layers but lists {}",
            specs.len()
        )));
    }
    let mut net = Network::<T>::zeroed(&specs, input)
        .map_err(|e| Error::Format(format!("inconsistent layer specs: {e}")))?;
    net.set_mode(mode.ok_or_else(|| missing("mode"))?);
    net.set_signal_len(signal_len.ok_or_else(|| missing("signal_len"))?);

    let expected = net.param_count()
        + net.running.iter().flatten().map(|r| 2 * r.mean.len()).sum::<usize>();
    let payload = &bytes[end..];
    if payload.len() != expected * 4 {
        return Err(Error::Format(format!(
            "parameter payload is {} bytes, expected {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64));
    let mut fill = |dst: &mut [T]| {
        for d in dst {
            *d = values.next().expect("length checked");
        }
    };
    for layer in 0..specs.len() {
        for p in net.params[layer].iter_mut() {
            fill(p.data_mut());
        }
        if let Some(r) = net.running[layer].as_mut() {
            fill(&mut r.mean);
            fill(&mut r.var);
        }
    }
    Ok(net)
}

pub fn save_network<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_network(net))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network<f32>> {
    decode_network(&read_all(path)?)
}
