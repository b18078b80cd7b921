use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::new(dims.to_vec(), data).expect("extents")
}

/// `K x K x Cin x Cout` kernel.
pub fn conv_kernel(k: usize, cin: usize, cout: usize, rng: &mut Rng) -> Tensor {
    glorot_uniform(&[k, k, cin, cout], k * k * cin, k * k * cout, rng)
}

/// `n x m` weight matrix.
pub fn dense_weights(n: usize, m: usize, rng: &mut Rng) -> Tensor {
    glorot_uniform(&[n, m], n, m, rng)
}
