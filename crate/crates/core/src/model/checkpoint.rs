//! `ENCL1` checkpoint container.
//!
//! ```text
//! ENCL1\n
//! key=value\n            (canonical model configuration, fixed key order)
//! ...
//! \n                     (blank line ends the header)
//! param <name>\n<MRT1 snapshot>   (one block per parameter, canonical order)
//! ...
//! end\n
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{MbConvSpec, ModelConfig, ModelError, ModelParams};
use crate::tensor::{read_snapshot, write_snapshot};

pub const CHECKPOINT_MAGIC: &str = "ENCL1";
const FORMAT_VERSION: u32 = 1;

/// Canonical key/value rendering of a configuration.
pub fn config_header(config: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format_version={FORMAT_VERSION}");
    let _ = writeln!(s, "input_grid={}", config.input_grid);
    let _ = writeln!(s, "stem_channels={}", config.stem_channels);
    for (i, st) in config.stage_specs.iter().enumerate() {
        let _ = writeln!(
            s,
            "stage.{}=expansion:{},in:{},out:{},kernel:{},stride:{},se_reduction:{},residual:{}",
            i + 1,
            st.expansion_ratio,
            st.in_channels,
            st.out_channels,
            st.kernel_size,
            st.stride,
            st.se_reduction,
            st.has_residual
        );
    }
    let _ = writeln!(s, "hidden_channels={}", config.hidden_channels);
    let _ = writeln!(s, "lstm_kernel={}", config.lstm_kernel);
    let _ = writeln!(s, "num_classes={}", config.num_classes);
    let _ = writeln!(s, "dropout_rate={}", config.dropout_rate);
    s
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn parse_stage(value: &str) -> Result<MbConvSpec, ModelError> {
    let mut fields = std::collections::HashMap::new();
    for part in value.split(',') {
        let (k, v) = part.split_once(':').ok_or_else(|| bad(format!("stage field '{part}'")))?;
        fields.insert(k, v);
    }
    let num = |k: &str| -> Result<usize, ModelError> {
        fields
            .get(k)
            .ok_or_else(|| bad(format!("stage missing '{k}'")))?
            .parse()
            .map_err(|_| bad(format!("stage field '{k}' is not an integer")))
    };
    let residual = match fields.get("residual") {
        Some(&"true") => true,
        Some(&"false") => false,
        _ => return Err(bad("stage residual flag")),
    };
    Ok(MbConvSpec {
        expansion_ratio: num("expansion")?,
        in_channels: num("in")?,
        out_channels: num("out")?,
        kernel_size: num("kernel")?,
        stride: num("stride")?,
        se_reduction: num("se_reduction")?,
        has_residual: residual,
    })
}

pub fn parse_config_header(lines: &[String]) -> Result<ModelConfig, ModelError> {
    let mut stages: Vec<(usize, MbConvSpec)> = Vec::new();
    let mut get = std::collections::HashMap::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("header line '{line}'")))?;
        if let Some(idx) = k.strip_prefix("stage.") {
            let idx: usize = idx.parse().map_err(|_| bad(format!("stage key '{k}'")))?;
            stages.push((idx, parse_stage(v)?));
        } else if get.insert(k.to_string(), v.to_string()).is_some() {
            return Err(bad(format!("duplicate header key '{k}'")));
        }
    }
    let num = |k: &str| -> Result<usize, ModelError> {
        get.get(k)
            .ok_or_else(|| bad(format!("header missing '{k}'")))?
            .parse()
            .map_err(|_| bad(format!("header '{k}' is not an integer")))
    };
    let version = num("format_version")?;
    if version != FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported checkpoint format version {version}")));
    }
    stages.sort_by_key(|(i, _)| *i);
    if stages.iter().enumerate().any(|(pos, (i, _))| *i != pos + 1) {
        return Err(bad("stage indices must be 1..n without gaps"));
    }
    let dropout_rate = get
        .get("dropout_rate")
        .ok_or_else(|| bad("header missing 'dropout_rate'"))?
        .parse()
        .map_err(|_| bad("dropout_rate"))?;
    let config = ModelConfig {
        input_grid: num("input_grid")?,
        stem_channels: num("stem_channels")?,
        stage_specs: stages.into_iter().map(|(_, s)| s).collect(),
        hidden_channels: num("hidden_channels")?,
        lstm_kernel: num("lstm_kernel")?,
        num_classes: num("num_classes")?,
        dropout_rate,
    };
    config.validate()?;
    Ok(config)
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<(), ModelError> {
    let io = |e: std::io::Error| bad(e.to_string());
    writeln!(out, "{CHECKPOINT_MAGIC}").map_err(io)?;
    out.write_all(config_header(params.config()).as_bytes()).map_err(io)?;
    writeln!(out).map_err(io)?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        writeln!(out, "param {name}").map_err(io)?;
        write_snapshot(t, &mut out)?;
    }
    writeln!(out, "end").map_err(io)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams, ModelError> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let next_line = |reader: &mut BufReader<R>, line: &mut String| -> Result<(), ModelError> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            return Err(bad("unexpected end of checkpoint"));
        }
        if line.ends_with('\n') {
            line.pop();
        }
        Ok(())
    };
    next_line(&mut reader, &mut line)?;
    if line != CHECKPOINT_MAGIC {
        return Err(bad(format!("not an {CHECKPOINT_MAGIC} checkpoint")));
    }
    let mut header = Vec::new();
    loop {
        next_line(&mut reader, &mut line)?;
        if line.is_empty() {
            break;
        }
        header.push(line.clone());
    }
    let config = parse_config_header(&header)?;
    let mut named = Vec::new();
    loop {
        next_line(&mut reader, &mut line)?;
        if line == "end" {
            break;
        }
        let name = line
            .strip_prefix("param ")
            .ok_or_else(|| bad(format!("expected 'param <name>', found '{line}'")))?
            .to_string();
        let t = read_snapshot(&mut reader)?;
        named.push((name, t));
    }
    ModelParams::from_tensors(config, named)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let file = std::fs::File::create(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush().map_err(|e| bad(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let file = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;

    #[test]
    fn roundtrip_is_exact() {
        let p = init_parameters(&ModelConfig::desk(), 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(buf.starts_with(b"ENCL1\nformat_version=1\ninput_grid=32\n"));
        let q = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn header_is_canonical() {
        let c = ModelConfig::default();
        let h = config_header(&c);
        let lines: Vec<String> = h.lines().map(String::from).collect();
        assert_eq!(parse_config_header(&lines).unwrap(), c);
        assert!(h.contains("stage.3=expansion:6,in:6,out:10,kernel:5,stride:2,se_reduction:4,residual:false\n"));
    }

    #[test]
    fn tampered_shape_names_the_tensor() {
        let p = init_parameters(&ModelConfig::gradient_check(), 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        // widen the hidden state in the header so the ConvLSTM tensors no longer fit
        let text = String::from_utf8_lossy(&buf).into_owned();
        let mut bytes = buf.clone();
        let pos = text.find("hidden_channels=2").unwrap() + "hidden_channels=".len();
        bytes[pos] = b'3';
        match read_checkpoint(bytes.as_slice()) {
            Err(ModelError::Mismatch { tensor, .. }) => assert_eq!(tensor, "convlstm.wx_f"),
            other => panic!("{other:?}"),
        }
    }
}
