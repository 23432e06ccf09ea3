//! Versioned text container for [`NetworkParams`].
//!
//! Layout: a header describing the shape, a `data` line, then every
//! parameter array in declaration order (per layer kernels out-major then
//! biases, flatten templates channel-major, head weights then biases), and a
//! closing `end`. Floats use the shortest decimal representation, which
//! round-trips f64 values bit-exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::grid::Grid2D;

use super::{
    Activation, CnnError, ConvLayer, DenseLayer, LayerSpec, NetworkParams, Pool, OUTPUT_DIM,
};

const MAGIC: &str = "GRI-PARAMS";
const VERSION: u32 = 1;

pub fn write_params(params: &NetworkParams, w: &mut impl Write) -> Result<(), CnnError> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "input_side {}", params.input_side)?;
    writeln!(w, "symmetric {}", params.symmetric_mode as u8)?;
    writeln!(w, "flatten_activation {}", params.flatten_activation)?;
    writeln!(w, "conv_layers {}", params.layers.len())?;
    for layer in &params.layers {
        let s = &layer.spec;
        writeln!(
            w,
            "layer {} {} {} {} {}",
            s.kernel_side, s.in_channels, s.out_channels, s.activation, s.pool
        )?;
    }
    let channels = params.flatten.len();
    let nodes = params.flatten.first().map(|n| n.len()).unwrap_or(0);
    let side = params
        .flatten
        .first()
        .and_then(|n| n.first())
        .map(|t| t.side())
        .unwrap_or(1);
    writeln!(w, "flatten {channels} {nodes} {side}")?;
    writeln!(w, "head_layers {}", params.head.len())?;
    for dense in &params.head {
        writeln!(w, "dense {} {}", dense.in_dim, dense.out_dim)?;
    }
    writeln!(w, "data")?;
    let mut emit = FloatEmitter::new(w);
    for layer in &params.layers {
        for k in &layer.kernels {
            emit.floats(k.as_slice())?;
        }
        emit.floats(&layer.biases)?;
    }
    for nodes in &params.flatten {
        for t in nodes {
            emit.floats(t.as_slice())?;
        }
    }
    for dense in &params.head {
        emit.floats(&dense.weights)?;
        emit.floats(&dense.biases)?;
    }
    emit.finish()?;
    writeln!(emit.w, "end")?;
    Ok(())
}

struct FloatEmitter<'a, W: Write> {
    w: &'a mut W,
    on_line: usize,
}

impl<'a, W: Write> FloatEmitter<'a, W> {
    fn new(w: &'a mut W) -> Self {
        FloatEmitter { w, on_line: 0 }
    }

    fn floats(&mut self, vals: &[f64]) -> Result<(), CnnError> {
        for v in vals {
            if self.on_line == 8 {
                writeln!(self.w)?;
                self.on_line = 0;
            }
            if self.on_line > 0 {
                write!(self.w, " ")?;
            }
            write!(self.w, "{v}")?;
            self.on_line += 1;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), CnnError> {
        if self.on_line > 0 {
            writeln!(self.w)?;
            self.on_line = 0;
        }
        Ok(())
    }
}

struct Tokens {
    toks: Vec<String>,
    pos: usize,
}

impl Tokens {
    fn next(&mut self) -> Result<&str, CnnError> {
        let t = self
            .toks
            .get(self.pos)
            .ok_or_else(|| CnnError::Format("unexpected end of params file".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<(), CnnError> {
        let t = self.next()?;
        if t != word {
            return Err(CnnError::Format(format!("expected {word:?}, got {t:?}")));
        }
        Ok(())
    }

    fn usize(&mut self) -> Result<usize, CnnError> {
        let t = self.next()?;
        t.parse().map_err(|_| CnnError::Format(format!("bad integer {t:?}")))
    }

    fn float(&mut self) -> Result<f64, CnnError> {
        let t = self.next()?;
        let v: f64 = t.parse().map_err(|_| CnnError::Format(format!("bad float {t:?}")))?;
        if !v.is_finite() {
            return Err(CnnError::Format(format!("non-finite value {t:?}")));
        }
        Ok(v)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, CnnError> {
        (0..n).map(|_| self.float()).collect()
    }
}

pub fn read_params(r: &mut impl BufRead) -> Result<NetworkParams, CnnError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut t =
        Tokens { toks: text.split_whitespace().map(str::to_owned).collect(), pos: 0 };
    t.expect(MAGIC)?;
    let version = t.usize()?;
    if version != VERSION as usize {
        return Err(CnnError::Format(format!("unsupported params version {version}")));
    }
    t.expect("input_side")?;
    let input_side = t.usize()?;
    t.expect("symmetric")?;
    let symmetric_mode = t.usize()? != 0;
    t.expect("flatten_activation")?;
    let flatten_activation: Activation = t.next()?.parse()?;
    t.expect("conv_layers")?;
    let n_layers = t.usize()?;
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        t.expect("layer")?;
        let kernel_side = t.usize()?;
        let in_channels = t.usize()?;
        let out_channels = t.usize()?;
        let activation: Activation = t.next()?.parse()?;
        let pool: Pool = t.next()?.parse()?;
        specs.push(LayerSpec { kernel_side, in_channels, out_channels, activation, pool });
    }
    t.expect("flatten")?;
    let channels = t.usize()?;
    let nodes = t.usize()?;
    let template_side = t.usize()?;
    t.expect("head_layers")?;
    let n_head = t.usize()?;
    let mut head_dims = Vec::with_capacity(n_head);
    for _ in 0..n_head {
        t.expect("dense")?;
        let in_dim = t.usize()?;
        let out_dim = t.usize()?;
        head_dims.push((in_dim, out_dim));
    }
    if head_dims.last().map(|d| d.1) != Some(OUTPUT_DIM) {
        return Err(CnnError::Format("head must end in 2 output nodes".into()));
    }
    t.expect("data")?;
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let mut kernels = Vec::with_capacity(spec.out_channels * spec.in_channels);
        for _ in 0..spec.out_channels * spec.in_channels {
            let data = t.floats(spec.kernel_side * spec.kernel_side)?;
            kernels.push(Grid2D::new(spec.kernel_side, data)?);
        }
        let biases = t.floats(spec.out_channels)?;
        layers.push(ConvLayer { spec, kernels, biases });
    }
    let mut flatten = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mut templates = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let data = t.floats(template_side * template_side)?;
            templates.push(Grid2D::new(template_side, data)?);
        }
        flatten.push(templates);
    }
    let mut head = Vec::with_capacity(n_head);
    for (in_dim, out_dim) in head_dims {
        let weights = t.floats(in_dim * out_dim)?;
        let biases = t.floats(out_dim)?;
        head.push(DenseLayer { in_dim, out_dim, weights, biases });
    }
    t.expect("end")?;
    if t.pos != t.toks.len() {
        return Err(CnnError::Format("trailing data in params file".into()));
    }
    let params = NetworkParams {
        input_side,
        layers,
        flatten,
        flatten_activation,
        head,
        symmetric_mode,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<(), CnnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(params, &mut f)
}

pub fn load_params(path: &Path) -> Result<NetworkParams, CnnError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut f)
}

#[cfg(test)]
mod tests {
    use super::super::{LayerSpec, NetShape, NetworkParams};
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn any_shape(symmetric: bool) -> NetShape {
        NetShape {
            input_side: 9,
            layers: vec![
                LayerSpec {
                    kernel_side: 5,
                    in_channels: 1,
                    out_channels: 2,
                    activation: Activation::LRelu(0.01),
                    pool: Pool::None,
                },
                LayerSpec {
                    kernel_side: 3,
                    in_channels: 2,
                    out_channels: 1,
                    activation: Activation::Sigmoid,
                    pool: Pool::Avg(3),
                },
            ],
            flatten_nodes: 2,
            hidden_dim: Some(3),
            symmetric,
        }
    }

    #[test]
    fn params_round_trip_bit_exactly() {
        for symmetric in [false, true] {
            let mut rng = StdRng::seed_from_u64(99);
            let params = NetworkParams::random(&any_shape(symmetric), &mut rng).unwrap();
            let mut buf = Vec::new();
            write_params(&params, &mut buf).unwrap();
            let back = read_params(&mut std::io::BufReader::new(&buf[..])).unwrap();
            assert_eq!(back, params);
            for (l, layer) in back.layers.iter().enumerate() {
                for (k, kernel) in layer.kernels.iter().enumerate() {
                    assert!(
                        kernel.bit_eq(&params.layers[l].kernels[k]),
                        "layer {l} kernel {k} not bit-identical"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_corrupted_files() {
        let mut rng = StdRng::seed_from_u64(100);
        let params = NetworkParams::random(&any_shape(false), &mut rng).unwrap();
        let mut buf = Vec::new();
        write_params(&params, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_magic = text.replacen(MAGIC, "XXX", 1);
        assert!(read_params(&mut bad_magic.as_bytes()).is_err());

        let truncated = &text[..text.len() / 2];
        assert!(read_params(&mut truncated.as_bytes()).is_err());

        let trailing = format!("{text} 1.0");
        assert!(read_params(&mut trailing.as_bytes()).is_err());
    }
}
