//! Per-view additive noise field: an MLP maps a point sampled on each pixel
//! ray, together with the ray direction, to a signed RGB offset that is
//! added to the splat render.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagekit::{add, Image, CHANNELS};
use crate::scalar::Real;
use crate::splatter::Camera;

pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 4;
/// Octaves of the sin/cos encoding of the position and of the direction.
pub const POSITION_OCTAVES: usize = 4;
pub const DIRECTION_OCTAVES: usize = 2;
pub const INPUT_DIM: usize = 3 + 6 * POSITION_OCTAVES + 3 + 6 * DIRECTION_OCTAVES;
pub const DEFAULT_SAMPLE_DEPTH: f64 = 1.0;

pub const SEGMENT_MAGIC: &[u8; 4] = b"FNMW";
pub const SEGMENT_VERSION: u32 = 1;

/// One point per pixel ray: `x = centre + t0 * d` with unit `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample<T> {
    pub x: [T; 3],
    pub d: [T; 3],
}

/// Row-major (`y * width + x`) grid of per-pixel samples.
pub fn sample_points<T: Real>(cam: &Camera<T>, t0: T) -> Vec<PointSample<T>> {
    let r = &cam.rotation;
    let t = cam.translation;
    // Camera centre C solves R C + T = 0.
    let centre: [T; 3] = std::array::from_fn(|j| -(r[0][j] * t[0] + r[1][j] * t[1] + r[2][j] * t[2]));
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let ray = [
                (T::from_usize_lossy(px) - cam.cx) / cam.fx,
                (T::from_usize_lossy(py) - cam.cy) / cam.fy,
                T::one(),
            ];
            let world: [T; 3] = std::array::from_fn(|j| r[0][j] * ray[0] + r[1][j] * ray[1] + r[2][j] * ray[2]);
            let n = (world[0] * world[0] + world[1] * world[1] + world[2] * world[2]).sqrt();
            let d = world.map(|v| v / n);
            out.push(PointSample {
                x: std::array::from_fn(|k| centre[k] + t0 * d[k]),
                d,
            });
        }
    }
    out
}

fn encode_into<T: Real>(v: [T; 3], octaves: usize, out: &mut Vec<T>) {
    out.extend_from_slice(&v);
    for k in 0..octaves {
        let f = T::PI() * T::lit((1u32 << k) as f64);
        for &c in &v {
            out.push((f * c).sin());
        }
        for &c in &v {
            out.push((f * c).cos());
        }
    }
}

/// Frequency encoding of one sample: raw `x`, `sin/cos(2^k pi x)` for the
/// position octaves, then the same for `d`. The direction is renormalized.
pub fn encode<T: Real>(s: &PointSample<T>) -> Vec<T> {
    let n = (s.d[0] * s.d[0] + s.d[1] * s.d[1] + s.d[2] * s.d[2]).sqrt();
    let d = if n > T::zero() { s.d.map(|v| v / n) } else { s.d };
    let mut out = Vec::with_capacity(INPUT_DIM);
    encode_into(s.x, POSITION_OCTAVES, &mut out);
    encode_into(d, DIRECTION_OCTAVES, &mut out);
    out
}

/// Encoded network input for every pixel of a view, one row per pixel.
pub fn encode_view<T: Real>(cam: &Camera<T>, t0: T) -> Array2<T> {
    let samples = sample_points(cam, t0);
    let mut flat = Vec::with_capacity(samples.len() * INPUT_DIM);
    for s in &samples {
        flat.extend(encode(s));
    }
    Array2::from_shape_vec((samples.len(), INPUT_DIM), flat).expect("encoding width is fixed")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `(out, in)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// `INPUT_DIM -> 128 -> 128 -> 128 -> 128 -> 3`, ReLU after every hidden
/// layer, linear output. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMlp<T> {
    pub layers: Vec<Layer<T>>,
}

pub type MlpGrad<T> = NoiseMlp<T>;

pub fn layer_dims() -> Vec<usize> {
    let mut dims = vec![INPUT_DIM];
    dims.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
    dims.push(CHANNELS);
    dims
}

/// Cached activations of one forward pass.
pub struct Activations<T> {
    /// Input followed by every hidden layer's post-ReLU output.
    hidden: Vec<Array2<T>>,
    pub output: Array2<T>,
}

impl<T: Real> NoiseMlp<T> {
    /// He-uniform hidden layers, zero biases, and an all-zero output layer
    /// so a fresh field predicts no noise.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = layer_dims();
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = if i == last {
                    Array2::zeros((fan_out, fan_in))
                } else {
                    Array2::from_shape_simple_fn((fan_out, fan_in), || T::lit(rng.gen_range(-bound..bound)))
                };
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter as one flat slice per tensor, weights before biases,
    /// layer by layer.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let dims = layer_dims();
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::InvalidParameter(format!(
                "noise MLP needs {} layers, got {}",
                dims.len() - 1,
                self.layers.len()
            )));
        }
        for (i, (l, io)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            if l.weight.dim() != (io[1], io[0]) || l.bias.len() != io[1] {
                return Err(Error::InvalidParameter(format!("noise MLP layer {i} has the wrong shape")));
            }
        }
        Ok(())
    }

    /// Batched forward pass over encoded rows.
    pub fn forward(&self, input: &Array2<T>) -> Activations<T> {
        let mut hidden = vec![input.clone()];
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = hidden.last().expect("input present").dot(&l.weight.t());
            z += &l.bias;
            if i + 1 == n {
                return Activations { hidden, output: z };
            }
            z.mapv_inplace(|v| v.max(T::zero()));
            hidden.push(z);
        }
        unreachable!("network has an output layer")
    }

    /// Reverse pass for `sum(upstream * output)`.
    pub fn backward(&self, acts: &Activations<T>, upstream: &Array2<T>) -> MlpGrad<T> {
        let mut grad = self.zeros_like();
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let below = &acts.hidden[i];
            grad.layers[i].weight = delta.t().dot(below);
            grad.layers[i].bias = delta.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let mut next = delta.dot(&self.layers[i].weight);
            // ReLU mask from the post-activation values.
            next.zip_mut_with(below, |g, &h| {
                if h <= T::zero() {
                    *g = T::zero();
                }
            });
            delta = next;
        }
        grad
    }

    pub fn encode_segment(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SEGMENT_MAGIC);
        out.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers[0].weight.ncols() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.weight.nrows() as u32).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
    }

    /// Parses a segment at the start of `bytes`; returns the network and
    /// the number of bytes consumed.
    pub fn decode_segment(bytes: &[u8]) -> std::result::Result<(Self, usize), String> {
        let mut at = 0usize;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            let chunk = bytes.get(at..at + n).ok_or("truncated noise-field segment")?;
            at += n;
            Ok(chunk)
        };
        if take(4)? != SEGMENT_MAGIC {
            return Err("missing FNMW magic".into());
        }
        let word = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let version = word(take(4)?);
        if version != SEGMENT_VERSION as usize {
            return Err(format!("unsupported noise-field segment version {version}"));
        }
        let n_layers = word(take(4)?);
        if n_layers == 0 || n_layers > 64 {
            return Err(format!("implausible layer count {n_layers}"));
        }
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            dims.push(word(take(4)?));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for io in dims.windows(2) {
            let (fan_in, fan_out) = (io[0], io[1]);
            let count = fan_in
                .checked_mul(fan_out)
                .and_then(|n| n.checked_add(fan_out))
                .ok_or("layer size overflows")?;
            let raw = take(count.checked_mul(4).ok_or("layer size overflows")?)?;
            let vals: Vec<T> = raw
                .chunks_exact(4)
                .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
                .collect();
            let weight = Array2::from_shape_vec((fan_out, fan_in), vals[..fan_in * fan_out].to_vec())
                .map_err(|e| e.to_string())?;
            let bias = Array1::from(vals[fan_in * fan_out..].to_vec());
            layers.push(Layer { weight, bias });
        }
        let mlp = Self { layers };
        mlp.validate().map_err(|e| e.to_string())?;
        Ok((mlp, at))
    }
}

fn to_image<T: Real>(out: &Array2<T>, width: usize, height: usize) -> Image<T> {
    let data = out.as_standard_layout().iter().copied().collect();
    Image::from_vec(width, height, data).expect("one output row per pixel")
}

fn from_image<T: Real>(img: &Image<T>) -> Array2<T> {
    Array2::from_shape_vec((img.pixel_count(), CHANNELS), img.data().to_vec()).expect("interleaved RGB")
}

/// Signed noise image of one view (no clamping).
pub fn noise_map<T: Real>(mlp: &NoiseMlp<T>, cam: &Camera<T>, t0: T) -> Image<T> {
    let acts = mlp.forward(&encode_view(cam, t0));
    to_image(&acts.output, cam.width, cam.height)
}

/// Element-wise sum of the noise map and the render, left unclamped.
pub fn compose<T: Real>(noise: &Image<T>, render: &Image<T>) -> Result<Image<T>> {
    add(noise, render)
}

/// Gradient of `sum(upstream * noise_map(mlp, cam, t0))` for every weight and bias.
pub fn mlp_backward<T: Real>(mlp: &NoiseMlp<T>, cam: &Camera<T>, t0: T, upstream: &Image<T>) -> Result<MlpGrad<T>> {
    if upstream.dims() != (cam.width, cam.height) {
        return Err(Error::DimensionMismatch {
            left: upstream.dims(),
            right: (cam.width, cam.height),
        });
    }
    let acts = mlp.forward(&encode_view(cam, t0));
    Ok(mlp.backward(&acts, &from_image(upstream)))
}

/// Forward pass on a precomputed [`encode_view`] input, returning the
/// noise image and the activations needed by [`NoiseMlp::backward`].
pub fn noise_map_encoded<T: Real>(
    mlp: &NoiseMlp<T>,
    input: &Array2<T>,
    width: usize,
    height: usize,
) -> (Image<T>, Activations<T>) {
    let acts = mlp.forward(input);
    (to_image(&acts.output, width, height), acts)
}

/// [`NoiseMlp::backward`] with an image-shaped upstream gradient.
pub fn backward_image<T: Real>(mlp: &NoiseMlp<T>, acts: &Activations<T>, upstream: &Image<T>) -> MlpGrad<T> {
    mlp.backward(acts, &from_image(upstream))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize) -> Camera<f64> {
        Camera::look_at([0.3, -0.2, -2.0], [0.0; 3], [0.0, -1.0, 0.0], 10.0, w, h).unwrap()
    }

    #[test]
    fn shapes() {
        assert_eq!(INPUT_DIM, 42);
        let mlp = NoiseMlp::<f32>::init(0);
        mlp.validate().unwrap();
        assert_eq!(layer_dims(), vec![42, 128, 128, 128, 128, 3]);
        assert_eq!(mlp.param_count(), 42 * 128 + 128 + 3 * (128 * 128 + 128) + 128 * 3 + 3);
    }

    #[test]
    fn fresh_field_predicts_no_noise() {
        let map = noise_map(&NoiseMlp::<f64>::init(3), &cam(6, 5), 1.0);
        assert!(map.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn centre_pixel_looks_forward() {
        let identity = Camera {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            fx: 8.0,
            fy: 8.0,
            cx: 2.0,
            cy: 2.0,
            width: 5,
            height: 5,
        };
        let s = sample_points(&identity, 1.5)[2 * 5 + 2];
        assert_eq!(s.d, [0.0, 0.0, 1.0]);
        assert_eq!(s.x, [0.0, 0.0, 1.5]);
    }

    #[test]
    fn compose_is_plain_addition() {
        let r = Image::<f64>::from_fn(4, 3, |x, y, c| (x + 2 * y + c) as f64 * 0.1);
        let n = Image::<f64>::from_fn(4, 3, |x, y, c| (x as f64 - y as f64) * 0.07 - c as f64 * 0.2);
        assert_eq!(compose(&Image::zeros(4, 3), &r).unwrap(), r);
        assert_eq!(compose(&n, &r).unwrap(), compose(&r, &n).unwrap());
        let sum = compose(&n, &r).unwrap();
        for i in 0..sum.data().len() {
            assert_eq!(sum.data()[i], n.data()[i] + r.data()[i]);
        }
        assert!(compose(&n, &Image::zeros(3, 4)).is_err());
    }

    #[test]
    fn segment_round_trip() {
        let mut mlp = NoiseMlp::<f32>::init(11);
        mlp.layers[4].bias[1] = 0.25;
        let mut buf = Vec::new();
        mlp.encode_segment(&mut buf);
        let (back, used) = NoiseMlp::<f32>::decode_segment(&buf).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(used, buf.len());
        assert!(NoiseMlp::<f32>::decode_segment(&buf[..buf.len() - 3]).is_err());
    }
}
