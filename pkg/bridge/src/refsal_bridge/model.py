"""Torch-backed session: one image-text matching pass per request.

Hook contract (duck-typed; any torch VLP wrapper can implement it):

  - ``latent_grid()`` -> (h, w) of the visual token grid
  - ``image_size()`` -> (X, Y) of the decoded image
  - ``cross_attention_probs`` -> ordered list of modules whose forward
    OUTPUT is the cross-attention probability tensor, shaped
    (batch, heads, text_tokens, h*w)
  - ``itm_forward(tokens, image_ref, feature_mask, image_mask)`` -> scalar
    matching probability in [0, 1], differentiable w.r.t. the attention

The session hooks the designated layer (1-based index, default 8), runs
forward and backward per request, mean-reduces heads, and exports the raw
signed gradients. Feature-mode masks are also applied post-hoc so masked
cells are exactly zero in the serialized tensors regardless of how the
model implements masking (softmax leaves denormals behind).
"""

from __future__ import annotations

import threading

import numpy as np

from .protocol import ProtocolError

DEFAULT_LAYER_INDEX = 8


class ModelError(Exception):
    pass


class TorchModelSession:
    def __init__(self, model, layer_index: int = DEFAULT_LAYER_INDEX):
        try:
            import torch  # noqa: F401
        except ImportError as exc:
            raise ModelError("torch is required for model-backed serving") from exc
        layers = list(model.cross_attention_probs)
        if not 1 <= layer_index <= len(layers):
            raise ModelError(
                f"layer index {layer_index} invalid: model has {len(layers)} "
                "cross-attention layers"
            )
        self._model = model
        self._hooked = layers[layer_index - 1]
        self._lock = threading.Lock()
        self.layer_index = layer_index
        self.latent = tuple(model.latent_grid())

    @property
    def capabilities(self):
        return ("forward", "model")

    def forward(self, image: str, tokens: list[str], mask: np.ndarray, mask_mode: str):
        import torch

        h, w = self.latent
        if mask.shape != (h, w):
            raise ProtocolError(f"mask shape {mask.shape} does not match latent {(h, w)}")
        mask_t = torch.from_numpy(mask.astype(np.float32))
        feature_mask = mask_t.reshape(-1) if mask_mode == "feature" else None
        image_mask = mask_t if mask_mode == "image" else None

        captured: list = []

        def grab(_module, _inputs, output):
            output.retain_grad()
            captured.append(output)

        with self._lock:
            handle = self._hooked.register_forward_hook(grab)
            try:
                with torch.enable_grad():
                    score = self._model.itm_forward(tokens, image, feature_mask, image_mask)
                    if not captured:
                        raise ModelError("hooked layer never ran during itm_forward")
                    probs = captured[-1]
                    grads = torch.autograd.grad(score, probs, retain_graph=False)[0]
            finally:
                handle.remove()

        t = len(tokens)
        attention = probs.detach().mean(dim=1).reshape(t, h, w).cpu().numpy()
        gradients = grads.detach().mean(dim=1).reshape(t, h, w).cpu().numpy()
        if mask_mode == "feature":
            keep = mask.astype(np.float32)
            attention = attention * keep
            gradients = gradients * keep
        attention = np.clip(attention, 0.0, None)
        itm = float(min(max(float(score.detach()), 0.0), 1.0))
        return (
            attention.astype(np.float32),
            gradients.astype(np.float32),
            itm,
            (h, w),
            tuple(self._model.image_size()),
        )
