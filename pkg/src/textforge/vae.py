"""Small trainable VAE mapping 64×64 RGB images to 4-channel 16×16 latents.

Images live in [-1, 1] model space. ``encode`` returns the posterior mean in
eval mode (deterministic) and a reparameterized sample in train mode. The
``latent_scale`` buffer, fitted after training, normalizes latents to roughly
unit variance so the diffusion schedule sees well-scaled inputs; ``decode``
undoes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, DataError
from .unet import ResBlock


@dataclass
class VAEConfig:
    in_channels: int = 3
    latent_channels: int = 4
    base_width: int = 32
    num_down: int = 2  # each halves the spatial size
    groups: int = 8
    lr: float = 2e-3
    kl_weight: float = 1e-6
    batch_size: int = 32
    steps: int = 600

    def __post_init__(self):
        if self.num_down < 1:
            raise ConfigurationError("need at least one downsampling step")
        if self.base_width % self.groups:
            raise ConfigurationError("base_width must be divisible by groups")

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.num_down


class ToyVAE(nn.Module):
    def __init__(self, config: VAEConfig):
        super().__init__()
        self.config = config
        ch = config.base_width
        enc: list[nn.Module] = [nn.Conv2d(config.in_channels, ch, 3, padding=1)]
        for _ in range(config.num_down):
            enc += [
                ResBlock(ch, ch, config.groups, None),
                nn.Conv2d(ch, ch, 3, stride=2, padding=1),
            ]
        enc += [
            ResBlock(ch, ch, config.groups, None),
            nn.Conv2d(ch, 2 * config.latent_channels, 3, padding=1),
        ]
        self.encoder = nn.ModuleList(enc)

        dec: list[nn.Module] = [
            nn.Conv2d(config.latent_channels, ch, 3, padding=1),
            ResBlock(ch, ch, config.groups, None),
        ]
        for _ in range(config.num_down):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"), ResBlock(ch, ch, config.groups, None)]
        dec += [
            nn.GroupNorm(config.groups, ch),
            nn.SiLU(),
            nn.Conv2d(ch, config.in_channels, 3, padding=1),
        ]
        self.decoder = nn.ModuleList(dec)
        self.register_buffer("latent_scale", torch.ones(()))

    def _run(self, layers: nn.ModuleList, x: torch.Tensor) -> torch.Tensor:
        for layer in layers:
            x = layer(x)
        return x

    def posterior(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        factor = self.config.downsample_factor
        if image.shape[-1] % factor or image.shape[-2] % factor:
            raise DataError(
                f"image size {tuple(image.shape[-2:])} not divisible by {factor}"
            )
        mu, logvar = self._run(self.encoder, image).chunk(2, dim=1)
        return mu, logvar.clamp(-20, 10)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """Posterior mean in eval mode; reparameterized sample in train mode."""
        mu, logvar = self.posterior(image)
        if self.training:
            mu = mu + torch.randn_like(mu) * (0.5 * logvar).exp()
        return mu * self.latent_scale

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return self._run(self.decoder, latent / self.latent_scale)


def image_to_model(img_uint8: torch.Tensor) -> torch.Tensor:
    """uint8 (..., H, W) or (..., C, H, W) in [0,255] -> float in [-1, 1]."""
    return img_uint8.float() / 127.5 - 1.0

def model_to_image(x: torch.Tensor) -> torch.Tensor:
    """float model space -> uint8, clamped."""
    return ((x.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB (default peak matches [-1,1] range)."""
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return float("inf")
    return 10.0 * torch.log10(torch.tensor(peak**2 / mse)).item()


def fit_latent_scale(vae: ToyVAE, images: torch.Tensor, batch_size: int = 64) -> float:
    """Set latent_scale = 1/std of posterior means over ``images``."""
    vae.eval()
    vae.latent_scale.fill_(1.0)
    chunks = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            chunks.append(vae.encode(images[i : i + batch_size]))
    std = torch.cat(chunks).std()
    if std < 1e-8:
        raise DataError("degenerate latent distribution (zero variance)")
    vae.latent_scale.fill_(1.0 / std)
    return float(vae.latent_scale)


def train_vae(
    images: torch.Tensor, config: VAEConfig, seed: int = 0, log_every: int = 0
) -> tuple[ToyVAE, dict]:
    """Train on a tensor of images in model space; returns (vae, history).

    Loss is MSE reconstruction plus a small KL regularizer; after training the
    latent scale is fitted on the same corpus.
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise DataError("images must be a non-empty (N, C, H, W) tensor")
    torch.manual_seed(seed)
    vae = ToyVAE(config)
    opt = torch.optim.AdamW(vae.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    vae.train()
    for step in range(config.steps):
        idx = torch.randint(0, images.shape[0], (config.batch_size,), generator=gen)
        batch = images[idx]
        mu, logvar = vae.posterior(batch)
        z = mu + torch.randn_like(mu) * (0.5 * logvar).exp()
        recon = vae.decode(z)
        rec_loss = nn.functional.mse_loss(recon, batch)
        kl = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).mean()
        loss = rec_loss + config.kl_weight * kl
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(float(rec_loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"vae step {step + 1}/{config.steps} rec_loss {losses[-1]:.5f}")
    vae.eval()
    scale = fit_latent_scale(vae, images)
    return vae, {"rec_losses": losses, "latent_scale": scale}
