"""The engine's tensor naming scheme, reproduced for completeness checks.

The exporter owns the mapping from checkpoint names to these; the engine
never learns checkpoint naming conventions. Width parameters do not affect
the names, only depth does.
"""

from __future__ import annotations


def _attention(prefix: str) -> list[str]:
    return [
        f"{prefix}.{proj}.{param}"
        for proj in ("q", "k", "v", "out")
        for param in ("weight", "bias")
    ]


def _mlp(prefix: str) -> list[str]:
    return [
        f"{prefix}.fc1.weight",
        f"{prefix}.fc1.bias",
        f"{prefix}.fc2.weight",
        f"{prefix}.fc2.bias",
    ]


def encoder_tensor_names(depth: int = 2) -> list[str]:
    names = ["enc.patch_embed.weight", "enc.patch_embed.bias", "enc.pos_embed"]
    for i in range(depth):
        pre = f"enc.block{i}"
        names += [f"{pre}.ln1.weight", f"{pre}.ln1.bias"]
        names += _attention(f"{pre}.attn")
        names += [f"{pre}.ln2.weight", f"{pre}.ln2.bias"]
        names += _mlp(f"{pre}.mlp")
    names += ["enc.ln_f.weight", "enc.ln_f.bias"]
    return names


def decoder_tensor_names(depth: int = 2) -> list[str]:
    names = [
        "dec.mask_tokens",
        "dec.pe.freqs",
        "dec.kind_embed",
        "dec.mask_prompt.weight",
        "dec.mask_prompt.bias",
    ]
    for i in range(depth):
        pre = f"dec.block{i}"
        names += _attention(f"{pre}.self_attn")
        names += [f"{pre}.norm1.weight", f"{pre}.norm1.bias"]
        names += _attention(f"{pre}.t2i_attn")
        names += [f"{pre}.norm2.weight", f"{pre}.norm2.bias"]
        names += _mlp(f"{pre}.mlp")
        names += [f"{pre}.norm3.weight", f"{pre}.norm3.bias"]
        names += _attention(f"{pre}.i2t_attn")
        names += [f"{pre}.norm4.weight", f"{pre}.norm4.bias"]
    names += [
        "dec.upscale.fc1.weight",
        "dec.upscale.fc1.bias",
        "dec.upscale.fc2.weight",
        "dec.upscale.fc2.bias",
    ]
    for j in range(3):
        pre = f"dec.hyper{j}"
        names += [
            f"{pre}.fc1.weight",
            f"{pre}.fc1.bias",
            f"{pre}.fc2.weight",
            f"{pre}.fc2.bias",
            f"{pre}.fc3.weight",
            f"{pre}.fc3.bias",
        ]
    return names
