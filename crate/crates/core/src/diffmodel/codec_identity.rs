use crate::image::Image;

/// Pixel-space "autoencoder": the latent is the image itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdentityCodec;

impl IdentityCodec {
    pub fn encode(&self, image: &Image) -> Vec<f32> {
        image.pixels().to_vec()
    }

    pub fn decode(&self, latent: &[f32], side: usize) -> crate::error::Result<Image> {
        Image::new(side, latent.to_vec())
    }
}
