#![allow(dead_code)]

use gsmdet_core::bdnn::SymbolClassifier;
use gsmdet_core::channel::{derive_rng, sample_channel, sigma2_from_snr, transmit, NoiseSpec, Stream};
use gsmdet_core::gsm::{GsmConfig, TransmitSymbolBlock};
use gsmdet_core::{Complex64, ComplexMatrix};

pub struct Instance {
    pub block: TransmitSymbolBlock,
    pub h: ComplexMatrix,
    pub y: Vec<Complex64>,
    pub noise: NoiseSpec,
}

/// Random slot at `snr_db` (`+inf` for noiseless).
pub fn instance(cfg: &GsmConfig, snr_db: f64, seed: u64, index: u64) -> Instance {
    let mut bits = derive_rng(seed, Stream::Bits, &[index]);
    let mut chan = derive_rng(seed, Stream::Channel, &[index]);
    let mut nrng = derive_rng(seed, Stream::Noise, &[index]);
    let noise = if snr_db.is_infinite() {
        NoiseSpec::noiseless()
    } else {
        sigma2_from_snr(snr_db, cfg)
    };
    let block = cfg.random_block(&mut bits);
    let ch = sample_channel(cfg, &mut chan);
    let y = transmit(&cfg.expand(&block), &ch, &noise, &mut nrng).unwrap();
    Instance { block, h: ch.h, y, noise }
}

/// Straight triple loop: every TAC, every symbol vector, full `y - H x`.
pub fn naive_ml(y: &[Complex64], h: &ComplexMatrix, cfg: &GsmConfig) -> (usize, Vec<usize>, f64) {
    let m = cfg.mod_order();
    let np = cfg.n_active();
    let mut best = (0, vec![0; np], f64::INFINITY);
    for (t, tac) in cfg.tacs().iter().enumerate() {
        for code in 0..m.pow(np as u32) {
            let symbols: Vec<usize> = (0..np).map(|k| (code / m.pow((np - 1 - k) as u32)) % m).collect();
            let mut x = vec![Complex64::new(0.0, 0.0); cfg.n_tx()];
            for (k, &a) in tac.iter().enumerate() {
                x[a] = cfg.constellation().point(symbols[k]);
            }
            let mut metric = 0.0;
            for r in 0..h.rows() {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..h.cols() {
                    acc += h[(r, c)] * x[c];
                }
                metric += (y[r] - acc).norm_sqr();
            }
            if metric < best.2 {
                best = (t, symbols, metric);
            }
        }
    }
    best
}

/// Independent residual `||y - H x||^2` via the full sparse transmit vector.
pub fn residual(y: &[Complex64], h: &ComplexMatrix, cfg: &GsmConfig, tac_index: usize, symbols: &[usize]) -> f64 {
    let mut x = vec![Complex64::new(0.0, 0.0); cfg.n_tx()];
    for (k, &a) in cfg.tacs()[tac_index].iter().enumerate() {
        x[a] = cfg.constellation().point(symbols[k]);
    }
    let hx = h.mul_vec(&x).unwrap();
    y.iter().zip(&hx).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Classifier that always answers with the transmitted symbols.
pub struct PerfectClassifier {
    pub symbols: Vec<usize>,
}

impl SymbolClassifier for PerfectClassifier {
    fn classify(&self, _tac_index: usize, _feature: &[f64]) -> Vec<usize> {
        self.symbols.clone()
    }
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Plain-loop forward pass: ReLU hidden layers, softmax on the last.
pub fn reference_forward(net: &gsmdet_core::DenseNetwork, z0: &[f64]) -> Vec<f64> {
    let mut a = z0.to_vec();
    let n = net.layers().len();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.fan_out);
        for j in 0..layer.fan_out {
            let mut s = layer.bias[j];
            for i in 0..layer.fan_in {
                s += a[i] * layer.weights[i * layer.fan_out + j];
            }
            next.push(if l + 1 < n && s < 0.0 { 0.0 } else { s });
        }
        a = next;
    }
    let m = a.iter().cloned().fold(f64::MIN, f64::max);
    let log_z = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    a.iter().map(|v| (v - log_z).exp()).collect()
}

fn loss_at(net: &gsmdet_core::DenseNetwork, z0: &[f64], target: &[f64]) -> f64 {
    gsmdet_core::neural::cross_entropy(target, &net.forward(z0).unwrap())
}

/// Worst relative error between backprop and central differences over
/// `probes` randomly chosen parameters.
pub fn gradient_check(net: &gsmdet_core::DenseNetwork, z0: &[f64], target: &[f64], probes: usize, seed: u64) -> f64 {
    use rand::Rng;
    let grads = gsmdet_core::neural::backprop_gradients(net, z0, target).unwrap();
    let mut rng = derive_rng(seed, Stream::Init, &[99]);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let l = rng.random_range(0..net.layers().len());
        let layer = &net.layers()[l];
        let n_w = layer.weights.len();
        let p = rng.random_range(0..n_w + layer.bias.len());
        let analytic = if p < n_w { grads.layers[l].weights[p] } else { grads.layers[l].bias[p - n_w] };
        let mut plus = net.clone();
        let mut minus = net.clone();
        {
            let (a, b) = (&mut plus.layers_mut()[l], &mut minus.layers_mut()[l]);
            if p < n_w {
                a.weights[p] += step;
                b.weights[p] -= step;
            } else {
                a.bias[p - n_w] += step;
                b.bias[p - n_w] -= step;
            }
        }
        let numeric = (loss_at(&plus, z0, target) - loss_at(&minus, z0, target)) / (2.0 * step);
        let scale = (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// Random network and labelled input; small positive biases keep ReLUs
/// away from their kink.
pub fn random_gradcheck_case(seed: u64) -> (gsmdet_core::DenseNetwork, Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut rng = derive_rng(seed, Stream::Init, &[7]);
    let depth = rng.random_range(1..4);
    let mut layout = vec![rng.random_range(2..9)];
    for _ in 0..depth {
        layout.push(rng.random_range(2..9));
    }
    layout.push(rng.random_range(2..6));
    let mut net = gsmdet_core::neural::init_network(&layout, seed).unwrap();
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.random::<f64>() * 0.1;
        }
    }
    let z0: Vec<f64> = (0..layout[0]).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut target = vec![0.0; *layout.last().unwrap()];
    let k = rng.random_range(0..target.len());
    target[k] = 1.0;
    (net, z0, target)
}

/// Minimal integer expression evaluator: `+ - * ^`, parentheses, implicit
/// multiplication between adjacent factors, and named variables.
pub fn eval_expr(src: &str, vars: &[(&str, i128)]) -> i128 {
    struct P<'a> {
        s: &'a [u8],
        i: usize,
        vars: &'a [(&'a str, i128)],
    }
    impl P<'_> {
        fn ws(&mut self) {
            while self.i < self.s.len() && self.s[self.i] == b' ' {
                self.i += 1;
            }
        }
        fn peek(&mut self) -> Option<u8> {
            self.ws();
            self.s.get(self.i).copied()
        }
        fn sum(&mut self) -> i128 {
            let mut v = self.product();
            while let Some(c @ (b'+' | b'-')) = self.peek() {
                self.i += 1;
                let r = self.product();
                v = if c == b'+' { v + r } else { v - r };
            }
            v
        }
        fn product(&mut self) -> i128 {
            let mut v = self.power();
            loop {
                match self.peek() {
                    Some(b'*') => {
                        self.i += 1;
                        v *= self.power();
                    }
                    Some(c) if c == b'(' || c.is_ascii_alphanumeric() => v *= self.power(),
                    _ => return v,
                }
            }
        }
        fn power(&mut self) -> i128 {
            let base = self.atom();
            if self.peek() == Some(b'^') {
                self.i += 1;
                let e = self.power();
                return base.pow(e as u32);
            }
            base
        }
        fn atom(&mut self) -> i128 {
            match self.peek() {
                Some(b'(') => {
                    self.i += 1;
                    let v = self.sum();
                    assert_eq!(self.peek(), Some(b')'));
                    self.i += 1;
                    v
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.i;
                    while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                        self.i += 1;
                    }
                    std::str::from_utf8(&self.s[start..self.i]).unwrap().parse().unwrap()
                }
                Some(_) => {
                    // Longest variable name matching here.
                    let rest = std::str::from_utf8(&self.s[self.i..]).unwrap();
                    let (name, value) = self
                        .vars
                        .iter()
                        .filter(|(n, _)| rest.starts_with(n))
                        .max_by_key(|(n, _)| n.len())
                        .unwrap_or_else(|| panic!("unknown token at {rest:?}"));
                    self.i += name.len();
                    *value
                }
                None => panic!("unexpected end of expression"),
            }
        }
    }
    let mut p = P { s: src.as_bytes(), i: 0, vars };
    let v = p.sum();
    assert_eq!(p.peek(), None, "trailing input in {src:?}");
    v
}

pub const ML_MAC: &str = "2^B (8 Nr Np + 4 Nr - 1)";
pub const BZF_MAC: &str = "N (4 Np^3 + 12 Np^2 Nr + 7 Np^2 + 6 Nr Np + 6 Nr - 2 Np - 1)";
pub const BMMSE_MAC: &str = "N (4 Np^3 + 12 Np^2 Nr + 7 Np^2 + 6 Nr Np + 6 Nr - 1)";
pub const BDNN_FIRST_MAC: &str = "(4 Nr Np + 4 Nr - 1) d";
pub const BDNN_LAYER_MAC: &str = "e (2 d - 1)";

/// Four table rows evaluated from the formula strings.
pub fn independent_macs(cfg: &GsmConfig, widths: &[usize]) -> [i128; 4] {
    let vars = [
        ("B", cfg.bits_per_slot() as i128),
        ("N", cfg.tac_count() as i128),
        ("Nr", cfg.n_rx() as i128),
        ("Np", cfg.n_active() as i128),
    ];
    let mut dnn = eval_expr(BDNN_FIRST_MAC, &[vars[2], vars[3], ("d", widths[0] as i128)]);
    for k in 1..widths.len() {
        dnn += eval_expr(BDNN_LAYER_MAC, &[("d", widths[k - 1] as i128), ("e", widths[k] as i128)]);
    }
    [
        eval_expr(ML_MAC, &vars),
        eval_expr(BZF_MAC, &vars),
        eval_expr(BMMSE_MAC, &vars),
        eval_expr("N Np X", &[vars[1], vars[3], ("X", dnn)]),
    ]
}
