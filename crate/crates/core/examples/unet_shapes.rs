//! Parameter counts and the resolution ladder of the full-size and toy
//! U-Nets, plus one forward pass through the toy network.
//!
//! `cargo run --example unet_shapes`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use meldiff::diffusion::gaussian;
use meldiff::nn::Eager;
use meldiff::unet::{UNet, UNetConfig};
use meldiff::vocoder::{Vocoder, VocoderConfig};
use meldiff::Result;

fn describe(name: &str, cfg: UNetConfig) -> Result<UNet> {
    let unet = UNet::new(cfg)?;
    let c = unet.config();
    println!("{name}: {} parameters, frames must be a multiple of {}", unet.parameter_count(), 1 << c.downsamplings());
    for level in 0..c.levels() {
        println!(
            "  level {level}: width {:4}, dilation {}, attention {}, {} blocks",
            c.dim(level),
            c.dilations[level],
            c.has_attention[level],
            c.blocks_per_resolution[level]
        );
    }
    Ok(unet)
}

fn main() -> Result<()> {
    describe("full-size U-Net", UNetConfig::full_size())?;
    println!("full-size vocoder: {} parameters", Vocoder::new(VocoderConfig::full_size())?.parameter_count());

    let unet = describe("toy U-Net", UNetConfig::toy())?;
    let c = unet.config();
    let params = unet.init_params(0);
    let x = gaussian(&[2, c.audio_channels, c.n_mels, 64], &mut ChaCha8Rng::seed_from_u64(1));
    let y = unet.forward(&mut Eager::new(&params), &x, &[10, 900])?;
    println!("toy forward {:?} -> {:?}", x.shape(), y.shape());
    Ok(())
}
