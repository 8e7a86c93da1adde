//! The SAC update against a scalar-loop reference written from scratch:
//! its own MLP, squashed-Gaussian log-density, backpropagation and Adam.

use kcbf_core::agent::{Batch, ReplayBuffer, ReplayRecord, SacAgent, SacConfig};
use kcbf_core::safety_filter::ActionBox;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const OBS: usize = 3;
const ACT: usize = 2;
const LO: [f64; ACT] = [-2.0, 0.0];
const HI: [f64; ACT] = [1.0, 4.0];

/// Layer sizes and a flat parameter vector: per layer an out×in weight
/// stored column by column, then the bias.
struct Net {
    sizes: Vec<usize>,
}

struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Net {
    fn weight(&self, p: &[f64], off: usize, fan_out: usize, o: usize, i: usize) -> f64 {
        p[off + i * fan_out + o]
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let mut out = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut s = p[off + fan_in * fan_out + o];
                for i in 0..fan_in {
                    s += self.weight(p, off, fan_out, o, i) * prev[i];
                }
                out[o] = if l + 1 < layers { s.tanh() } else { s };
            }
            off += fan_in * fan_out + fan_out;
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates `∂L/∂p` into `grad` and returns `∂L/∂x`.
    fn backward(&self, p: &[f64], t: &Trace, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offs = vec![0];
        for l in 0..layers {
            offs.push(offs[l] + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]);
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out, off) = (self.sizes[l], self.sizes[l + 1], offs[l]);
            let prev = &t.acts[l];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                grad[off + fan_in * fan_out + o] += delta[o];
                for i in 0..fan_in {
                    grad[off + i * fan_out + o] += delta[o] * prev[i];
                    d_prev[i] += self.weight(p, off, fan_out, o, i) * delta[o];
                }
            }
            if l > 0 {
                for i in 0..fan_in {
                    d_prev[i] *= 1.0 - prev[i] * prev[i];
                }
            }
            delta = d_prev;
        }
        delta
    }
}

struct RefAdam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdam {
    fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// `β1 = 0`, `β2 = 0.999`, `ε = 1e-8`.
    fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c2 = 1.0 - 0.999f64.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = g[i];
            self.v[i] = 0.999 * self.v[i] + 0.001 * g[i] * g[i];
            p[i] -= self.lr * self.m[i] / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

struct Sample {
    a: Vec<f64>,
    u: Vec<f64>,
    log_std: Vec<f64>,
    log_prob: f64,
    trace: Trace,
}

fn half(i: usize) -> f64 {
    0.5 * (HI[i] - LO[i])
}

fn sample(actor: &Net, p: &[f64], s: &[f64], eps: &[f64]) -> Sample {
    let trace = actor.forward(p, s);
    let out = trace.acts.last().unwrap();
    let mut r = Sample { a: vec![], u: vec![], log_std: vec![], log_prob: 0.0, trace: Trace { acts: vec![] } };
    for i in 0..ACT {
        let ls = out[ACT + i].clamp(-20.0, 2.0);
        let pre = out[i] + ls.exp() * eps[i];
        let a = pre.tanh();
        r.log_prob += -0.5 * eps[i] * eps[i]
            - ls
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - (1.0 - a * a).ln()
            - half(i).ln();
        r.a.push(a);
        r.u.push(0.5 * (LO[i] + HI[i]) + half(i) * a);
        r.log_std.push(ls);
    }
    r.trace = trace;
    r
}

fn normalized(u: &[f64]) -> Vec<f64> {
    (0..ACT).map(|i| (u[i] - 0.5 * (LO[i] + HI[i])) / half(i)).collect()
}

fn q_input(s: &[f64], a: &[f64]) -> Vec<f64> {
    s.iter().chain(a).copied().collect()
}

struct Reference {
    actor_net: Net,
    critic_net: Net,
    actor: Vec<f64>,
    critics: [Vec<f64>; 2],
    targets: [Vec<f64>; 2],
    log_alpha: f64,
    opts: [RefAdam; 4],
    gamma: f64,
    tau: f64,
}

impl Reference {
    fn soft_targets(&self, batch: &[ReplayRecord], eps: &[Vec<f64>]) -> Vec<f64> {
        let alpha = self.log_alpha.exp();
        batch
            .iter()
            .zip(eps)
            .map(|(rec, e)| {
                let next = sample(&self.actor_net, &self.actor, &rec.s_next, e);
                let x = q_input(&rec.s_next, &normalized(&next.u));
                let q = (0..2).map(|k| self.critic_net.forward(&self.targets[k], &x).acts.last().unwrap()[0]).fold(f64::INFINITY, f64::min);
                rec.reward + self.gamma * (1.0 - rec.done as u8 as f64) * (q - alpha * next.log_prob)
            })
            .collect()
    }

    fn update(&mut self, batch: &[ReplayRecord], next_eps: &[Vec<f64>], eps: &[Vec<f64>]) {
        let n = batch.len() as f64;
        let y = self.soft_targets(batch, next_eps);
        for k in 0..2 {
            let mut g = vec![0.0; self.critics[k].len()];
            for (rec, yj) in batch.iter().zip(&y) {
                let t = self.critic_net.forward(&self.critics[k], &q_input(&rec.s, &normalized(&rec.u_safe)));
                let err = t.acts.last().unwrap()[0] - yj;
                self.critic_net.backward(&self.critics[k], &t, &[err / n], &mut g);
            }
            self.opts[k].step(&mut self.critics[k], &g);
        }

        let alpha = self.log_alpha.exp();
        let mut g = vec![0.0; self.actor.len()];
        let mut log_prob_sum = 0.0;
        for (rec, e) in batch.iter().zip(eps) {
            let smp = sample(&self.actor_net, &self.actor, &rec.s, e);
            log_prob_sum += smp.log_prob;
            let x = q_input(&rec.s, &smp.a);
            let traces: Vec<Trace> = (0..2).map(|k| self.critic_net.forward(&self.critics[k], &x)).collect();
            let qs: Vec<f64> = traces.iter().map(|t| t.acts.last().unwrap()[0]).collect();
            let k = if qs[0] <= qs[1] { 0 } else { 1 };
            let mut scratch = vec![0.0; self.critics[k].len()];
            let dx = self.critic_net.backward(&self.critics[k], &traces[k], &[-1.0 / n], &mut scratch);
            let mut d_out = vec![0.0; 2 * ACT];
            for i in 0..ACT {
                let a = smp.a[i];
                // ∂(α log π)/∂pre = 2α·tanh(pre); ∂(−Q)/∂pre through the squash
                let d_pre = alpha / n * 2.0 * a + dx[OBS + i] * (1.0 - a * a);
                d_out[i] = d_pre;
                let raw = smp.trace.acts.last().unwrap()[ACT + i];
                if (-20.0..=2.0).contains(&raw) {
                    d_out[ACT + i] = -alpha / n + d_pre * smp.log_std[i].exp() * e[i];
                }
            }
            self.actor_net.backward(&self.actor, &smp.trace, &d_out, &mut g);
        }
        self.opts[2].step(&mut self.actor, &g);

        let target_entropy = -(ACT as f64) + (0..ACT).map(|i| half(i).ln()).sum::<f64>();
        let mut la = [self.log_alpha];
        self.opts[3].step(&mut la, &[-(log_prob_sum / n + target_entropy)]);
        self.log_alpha = la[0];

        for k in 0..2 {
            for (t, c) in self.targets[k].iter_mut().zip(&self.critics[k]) {
                *t = (1.0 - self.tau) * *t + self.tau * c;
            }
        }
    }
}

fn records(rng: &mut ChaCha8Rng, n: usize) -> Vec<ReplayRecord> {
    (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..ACT).map(|i| rng.random_range(LO[i]..HI[i])).collect();
            ReplayRecord {
                s,
                z: vec![0.0],
                u_nom: u.clone(),
                u_safe: u,
                reward: rng.random_range(-1.0..1.0),
                s_next: (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect(),
                z_next: vec![0.0],
                done: rng.random_bool(0.3),
            }
        })
        .collect()
}

fn setup(seed: u64) -> (SacAgent, Reference) {
    let cfg = SacConfig { hidden: vec![5, 4], lambda_h: 0.0, ..SacConfig::default() };
    let ag = SacAgent::new(OBS, &ActionBox::new(LO.to_vec(), HI.to_vec()).unwrap(), cfg.clone(), seed);
    let actor_net = Net { sizes: vec![OBS, 5, 4, 2 * ACT] };
    let critic_net = Net { sizes: vec![OBS + ACT, 5, 4, 1] };
    assert_eq!(ag.actor.len(), actor_net.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>());
    let reference = Reference {
        actor_net,
        critic_net,
        actor: ag.actor.clone(),
        critics: ag.critics.clone(),
        targets: ag.targets.clone(),
        log_alpha: ag.log_alpha,
        opts: [
            RefAdam::new(ag.critics[0].len(), cfg.lr),
            RefAdam::new(ag.critics[1].len(), cfg.lr),
            RefAdam::new(ag.actor.len(), cfg.lr),
            RefAdam::new(1, cfg.lr),
        ],
        gamma: cfg.gamma,
        tau: cfg.tau,
    };
    (ag, reference)
}

/// Per-sample noise drawn in the agent's order: next-action noise first.
fn draw_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..ACT).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn unfiltered_updates_match_the_reference() {
    let mut data_rng = ChaCha8Rng::seed_from_u64(77);
    let (mut ag, mut reference) = setup(3);
    for step in 0..4 {
        let recs = records(&mut data_rng, 6);
        let batch = Batch::from_records(&recs.iter().collect::<Vec<_>>()).unwrap();
        let mut rng = ag.rng_mut().clone();
        let next_eps = draw_noise(&mut rng, recs.len());
        let eps = draw_noise(&mut rng, recs.len());
        ag.update(&batch, None).unwrap();
        reference.update(&recs, &next_eps, &eps);
        let worst = [
            max_diff(&ag.actor, &reference.actor),
            max_diff(&ag.critics[0], &reference.critics[0]),
            max_diff(&ag.critics[1], &reference.critics[1]),
            max_diff(&ag.targets[0], &reference.targets[0]),
            max_diff(&ag.targets[1], &reference.targets[1]),
            (ag.log_alpha - reference.log_alpha).abs(),
        ];
        assert!(worst.iter().all(|d| *d <= 1e-6), "step {step}: {worst:?}");
        // the parameters did move
        assert!(ag.updates == step + 1);
    }
}

/// Two records with frozen networks: the soft target recomputed by hand.
#[test]
fn two_record_soft_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (ag, reference) = setup(8);
    let mut recs = records(&mut rng, 2);
    recs[0].done = false;
    recs[1].done = true;
    let batch = Batch::from_records(&recs.iter().collect::<Vec<_>>()).unwrap();
    let eps = draw_noise(&mut rng, 2);
    let noise = DMatrix::from_fn(ACT, 2, |i, j| eps[j][i]);
    let lib = ag.critic_targets(&batch, None, &noise).unwrap();
    let oracle = reference.soft_targets(&recs, &eps);
    for j in 0..2 {
        assert!((lib[j] - oracle[j]).abs() <= 1e-12, "{} vs {}", lib[j], oracle[j]);
    }
    // terminal record: the target is the reward
    assert_eq!(lib[1], recs[1].reward);
    assert!(lib[0] != recs[0].reward);
}

#[test]
fn loss_traces_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut ag, _) = setup(5);
        (0..5)
            .map(|_| {
                let recs = records(&mut rng, 8);
                let batch = Batch::from_records(&recs.iter().collect::<Vec<_>>()).unwrap();
                ag.update(&batch, None).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

/// The buffer stores what the environment executed, bit for bit.
#[test]
pub fn replay_rejects_anything_but_the_applied_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut buf = ReplayBuffer::new(10, ActionBox::new(LO.to_vec(), HI.to_vec()).unwrap());
    let rec = records(&mut rng, 1).remove(0);
    let applied = rec.u_safe.clone();
    buf.push(rec.clone(), &applied).unwrap();
    let mut off = applied.clone();
    off[0] = f64::from_bits(off[0].to_bits() + 1);
    assert!(buf.push(rec.clone(), &off).is_err());
    let mut nominal = rec;
    nominal.u_safe = vec![LO[0], LO[1]];
    assert!(buf.push(nominal, &applied).is_err());
    assert_eq!(buf.len(), 1);
}
