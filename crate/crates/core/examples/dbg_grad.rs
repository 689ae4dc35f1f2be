// scratch: measure how far combined can fall behind the standalone recursions
use nubox::propagation::*;
use nubox::*;
use rand::{Rng, SeedableRng};

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    let mut worst_q: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    let mut q_hits = 0;
    for _ in 0..500 {
        let depth = rng.gen_range(1..=3usize);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(4..=32)).collect();
        let n_in = rng.gen_range(2..=6);
        let net = trainer::init_network(
            &[&[n_in][..], &hidden[..], &[3][..]].concat(),
            Activation::Relu,
            rng.gen(),
        )
        .unwrap();
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..n_in).map(|_| rng.gen_range(0.0..0.3)).collect();
        let budget = Budget::new(x, eps).unwrap();
        let c = bounds_combined(&net, &budget).unwrap();
        let s = bounds_simple(&net, &budget).unwrap();
        let q = bounds_quadratic(&net, &budget).unwrap();
        for k in 0..3 {
            let dq = (q.output_lower()[k] - c.output_lower()[k])
                .max(c.output_upper()[k] - q.output_upper()[k]);
            let ds = (s.output_lower()[k] - c.output_lower()[k])
                .max(c.output_upper()[k] - s.output_upper()[k]);
            if dq > 1e-12 { q_hits += 1; }
            worst_q = worst_q.max(dq);
            worst_s = worst_s.max(ds);
        }
    }
    println!("worst combined-behind-quadratic: {worst_q:.6e} ({q_hits} logit hits of 1500)");
    println!("worst combined-behind-simple:    {worst_s:.6e}");
}
