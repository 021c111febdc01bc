"""DeLiGAN: GANs with a learnable mixture-of-Gaussians latent space."""
