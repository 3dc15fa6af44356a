#!/usr/bin/env python3
"""Regenerate docs/protocol_schema.json from the in-code message schema."""

import json
from pathlib import Path

from chartduel.protocol import schema_as_dict

out = Path(__file__).resolve().parents[1] / "docs" / "protocol_schema.json"
out.parent.mkdir(exist_ok=True)
out.write_text(json.dumps(schema_as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
print(f"wrote {out}")
