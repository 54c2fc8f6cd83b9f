//! A small dense feed-forward network: sigmoid hidden layers, a linear output
//! layer, Huber loss on one selected output per sample, and Adam.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "lakecache-network 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// One training example: the target applies only to output `action`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: f64,
    pub action: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Huber loss with delta 1 and its derivative with respect to the prediction.
pub fn huber(error: f64) -> (f64, f64) {
    if error.abs() <= 1.0 {
        (0.5 * error * error, error)
    } else {
        (error.abs() - 0.5, error.signum())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

impl Network {
    /// Xavier-uniform weights, zero biases; a pure function of `seed`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for v in &mut layer.weights {
                    *v = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Ok(Network { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Network {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[i..i + nw]);
            i += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, starting with the input itself.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let x = &acts[li];
            let mut out = l.biases.clone();
            for (o, row) in l.weights.chunks_exact(l.inputs).enumerate() {
                out[o] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            if li != last {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.activations(input).pop().unwrap_or_default())
    }

    /// Mean Huber loss over `batch` and its gradient (same layout as
    /// [`Network::parameters`]).
    pub fn loss_and_gradient(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty training batch".into()));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.check_input(&s.input)?;
            if s.action >= self.output_len() {
                return Err(Error::Shape(format!("action {} out of range", s.action)));
            }
            let acts = self.activations(&s.input);
            let out = &acts[acts.len() - 1];
            let (l, dl) = huber(out[s.action] - s.target);
            loss += l;
            let mut delta = vec![0.0; out.len()];
            delta[s.action] = dl * scale;
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let x = &acts[li];
                let g = &mut grads[li];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(x).for_each(|(gw, xv)| *gw += d * xv);
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, row) in layer.weights.chunks_exact(layer.inputs).enumerate() {
                        let d = delta[o];
                        if d != 0.0 {
                            prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                        }
                    }
                    // x is a sigmoid output here.
                    prev.iter_mut().zip(x).for_each(|(p, a)| *p *= a * (1.0 - a));
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.parameter_count());
        for g in grads {
            flat.extend(g.weights);
            flat.extend(g.biases);
        }
        Ok((loss * scale, flat))
    }

    /// One Adam step on the mean Huber loss of `batch`; returns that loss.
    pub fn train_batch(&mut self, adam: &mut Adam, batch: &[Sample]) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss {loss} on a batch of {} (first target {})",
                batch.len(),
                batch[0].target
            )));
        }
        let mut params = self.parameters();
        adam.step(&mut params, &grad)?;
        self.set_parameters(&params)?;
        Ok(loss)
    }

    /// Make `self` a bit-for-bit copy of `src`.
    pub fn copy_from(&mut self, src: &Network) -> Result<()> {
        if self.sizes() != src.sizes() {
            return Err(Error::Shape(format!(
                "cannot copy {:?} into {:?}",
                src.sizes(),
                self.sizes()
            )));
        }
        self.layers.clone_from(&src.layers);
        Ok(())
    }

    /// Text checkpoint: a magic line, a `sizes` line, then one `w <layer>`
    /// and one `b <layer>` line per layer holding the values in order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        let sizes: Vec<String> = self.sizes().iter().map(ToString::to_string).collect();
        writeln!(w, "sizes {}", sizes.join(" "))?;
        for (i, l) in self.layers.iter().enumerate() {
            for (tag, values) in [("w", &l.weights), ("b", &l.biases)] {
                write!(w, "{tag} {i}")?;
                for v in values {
                    write!(w, " {v:?}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::Parse(format!("network checkpoint: {m}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        if next()?.trim() != CHECKPOINT_MAGIC {
            return Err(bad("bad header".into()));
        }
        let sizes_line = next()?;
        let sizes = sizes_line
            .strip_prefix("sizes ")
            .ok_or_else(|| bad("missing sizes".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Network::zeros(&sizes)?;
        for i in 0..net.layers.len() {
            for tag in ["w", "b"] {
                let line = next()?;
                let mut it = line.split_whitespace();
                if it.next() != Some(tag) || it.next() != Some(i.to_string().as_str()) {
                    return Err(bad(format!("expected '{tag} {i}'")));
                }
                let values = it
                    .map(|t| t.parse::<f64>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                let dst = if tag == "w" {
                    &mut net.layers[i].weights
                } else {
                    &mut net.layers[i].biases
                };
                if values.len() != dst.len() {
                    return Err(bad(format!("{tag} {i} has {} values, expected {}", values.len(), dst.len())));
                }
                dst.copy_from_slice(&values);
            }
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        let n = net.parameter_count();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn moments_len(&self) -> usize {
        self.m.len()
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
