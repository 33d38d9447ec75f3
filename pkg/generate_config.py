#!/usr/bin/env python3
"""
Generate run.cfg with every run setting at its default value

Usage:
    python generate_config.py [output_file] [--reference]

The file uses the dotted key=value format read by `--config`. Pass
--reference to write the full-size model widths (128/1024/300 inputs,
10172-word vocabulary) instead of the desk-scale defaults.
"""

import sys
from pathlib import Path

from app.config import ModelConfig, RunConfig, flatten_config


def format_value(value):
    """Render a config value the way load_run_config parses it back."""
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def build_config(reference: bool = False) -> RunConfig:
    if not reference:
        return RunConfig()
    model = ModelConfig.reference_scale()
    return RunConfig(model=model, data={"audio_dim": model.d_audio, "visual_dim": model.d_visual})


def generate_run_config(output_file: Path, reference: bool = False):
    config = build_config(reference)
    lines = []
    section = None
    for key, value in flatten_config(config).items():
        prefix = key.split(".", 1)[0] if "." in key else None
        if prefix != section:
            section = prefix
            lines.append("")
            lines.append(f"# {section or 'run'}")
        lines.append(f"{key}={format_value(value)}")

    output_file.write_text("\n".join(lines).lstrip("\n") + "\n", encoding="utf-8")
    print(f"✅ Successfully generated {output_file}")
    print(f"   Total keys written: {len(flatten_config(config))}")


if __name__ == '__main__':
    args = [a for a in sys.argv[1:] if a != "--reference"]
    target = Path(args[0]) if args else Path(__file__).parent / "run.cfg"
    generate_run_config(target, reference="--reference" in sys.argv[1:])
