"""Fine-tunes one student on exported role subsets with conditional LM loss."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch
from torch import nn

from .data import DataSchemaMismatch, Example, Vocab, load_subsets
from .model import TinyConfig, TinySeq2Seq

# Sequence cap and right-side truncation are trainer-owned; both are logged.
MAX_SEQ_LEN = 256


class OutOfMemory(Exception):
    pass


class CheckpointCorrupt(Exception):
    pass


@dataclass(frozen=True)
class TrainSpec:
    """Training configuration. Defaults match the published recipe."""

    subset_files: tuple[str, ...] = ()
    base_model: str = "tiny"
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    output_dir: str = "checkpoint"
    roles: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "subset_files": list(self.subset_files),
            "base_model": self.base_model,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "roles": list(self.roles),
        }


def specs_for_role_map(
    role_map: dict[str, str], subsets_dir: str | Path, output_root: str | Path, **overrides
) -> list[TrainSpec]:
    """One TrainSpec per distinct model name in a role -> model mapping.

    A model mapped to several roles trains on the union of their subsets,
    which is how the shared-model ablation categories are realized.
    """
    subsets_dir = Path(subsets_dir)
    grouped: dict[str, list[str]] = {}
    for role, model_name in role_map.items():
        grouped.setdefault(model_name, []).append(role)
    specs = []
    for model_name, roles in sorted(grouped.items()):
        files = tuple(str(subsets_dir / f"{role}.jsonl") for role in sorted(roles))
        specs.append(
            TrainSpec(
                subset_files=files,
                output_dir=str(Path(output_root) / model_name),
                roles=tuple(sorted(roles)),
                **overrides,
            )
        )
    return specs


def _batches(examples: Sequence[Example], batch_size: int, rng: random.Random):
    order = list(range(len(examples)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [examples[i] for i in order[start : start + batch_size]]


def _pad(rows: list[list[int]], pad_id: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    return torch.tensor([r + [pad_id] * (width - len(r)) for r in rows], dtype=torch.long)


def train(spec: TrainSpec) -> Path:
    """Train per the given TrainSpec; returns the checkpoint directory.

    The loss is token-level negative log-likelihood of the target sequence
    conditioned on the encoded input (prompts are already baked into the
    exported input field). Single-threaded and seeded for reproducibility.
    """
    if spec.base_model != "tiny":
        raise DataSchemaMismatch(
            f"base model {spec.base_model!r} is not available offline; use 'tiny' "
            "or point the environment at a loadable seq2seq checkpoint"
        )
    examples = load_subsets(spec.subset_files)

    torch.manual_seed(spec.seed)
    torch.set_num_threads(1)
    rng = random.Random(spec.seed)

    vocab = Vocab.build([e.input for e in examples] + [e.target for e in examples])
    model = TinySeq2Seq(TinyConfig(vocab_size=len(vocab)))
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.learning_rate)
    loss_fn = nn.CrossEntropyLoss(ignore_index=vocab.pad_id)

    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.jsonl"
    log = log_path.open("w", encoding="utf-8")

    def emit(event: dict) -> None:
        log.write(json.dumps(event, sort_keys=True) + "\n")
        log.flush()

    emit(
        {
            "event": "start",
            "learning_rate": spec.learning_rate,
            "batch_size": spec.batch_size,
            "epochs": spec.epochs,
            "seed": spec.seed,
            "optimizer": "AdamW",
            "scheduler": "none",
            "max_seq_len": MAX_SEQ_LEN,
            "truncation": "right",
            "n_examples": len(examples),
            "vocab_size": len(vocab),
            "base_model": spec.base_model,
            "roles": list(spec.roles),
        }
    )

    epoch_losses: list[float] = []
    try:
        for epoch in range(spec.epochs):
            model.train()
            total, batches = 0.0, 0
            for batch in _batches(examples, spec.batch_size, rng):
                src = _pad([vocab.encode(e.input, MAX_SEQ_LEN) for e in batch], vocab.pad_id)
                tgt = [vocab.encode(e.target, MAX_SEQ_LEN - 1) for e in batch]
                tgt_in = _pad([[vocab.bos_id] + row for row in tgt], vocab.pad_id)
                tgt_out = _pad([row + [vocab.eos_id] for row in tgt], vocab.pad_id)
                logits = model(src, tgt_in)
                loss = loss_fn(logits.reshape(-1, logits.size(-1)), tgt_out.reshape(-1))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss.detach())
                batches += 1
            mean_loss = total / batches
            epoch_losses.append(mean_loss)
            emit({"event": "epoch", "epoch": epoch + 1, "mean_loss": mean_loss})
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise OutOfMemory(
                f"training ran out of memory at batch_size={spec.batch_size}; "
                f"retry with a smaller batch size"
            ) from exc
        raise
    finally:
        log.close()

    torch.save(
        {
            "state_dict": model.state_dict(),
            "vocab": vocab.itos,
            "config": model.config_dict(),
        },
        out_dir / "model.pt",
    )
    (out_dir / "trainspec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with log_path.open("a", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {"event": "done", "final_loss": epoch_losses[-1], "loss_curve": epoch_losses},
                sort_keys=True,
            )
            + "\n"
        )
    return out_dir


def load_checkpoint(checkpoint_dir: str | Path) -> tuple[TinySeq2Seq, Vocab]:
    path = Path(checkpoint_dir) / "model.pt"
    if not path.exists():
        raise CheckpointCorrupt(f"missing model file: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        vocab = Vocab(payload["vocab"])
        model = TinySeq2Seq(TinyConfig(**payload["config"]))
        model.load_state_dict(payload["state_dict"])
    except Exception as exc:  # any load failure means the checkpoint is unusable
        raise CheckpointCorrupt(f"cannot load checkpoint {checkpoint_dir}: {exc}") from exc
    model.eval()
    return model, vocab


def generate(model: TinySeq2Seq, vocab: Vocab, prompt: str) -> str:
    src = torch.tensor([vocab.encode(prompt, MAX_SEQ_LEN) or [vocab.pad_id]], dtype=torch.long)
    out_ids = model.greedy_decode(src, vocab.bos_id, vocab.eos_id)
    return vocab.decode(out_ids)
