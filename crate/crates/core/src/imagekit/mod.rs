//! Image container, pixel arithmetic, quality metrics and file I/O.

mod histogram;
mod image;
mod io;
mod metrics;

pub use self::histogram::{
    bin_index, hist_correlation, histogram, pearson, soft_histogram, Binning, Histogram,
    HistogramReference, HIST_BINS,
};
pub use self::image::{add, ensure_same_dims, Image, CHANNELS};
pub use self::io::{quantize, quantize_u8, read_image, write_image, Format};
pub use self::metrics::{
    gaussian_taps, mean_abs_error, mse, psnr, psnr_capped, psnr_from_mse, ssim, ssim_with_grad,
    SsimReference, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
