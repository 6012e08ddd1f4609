"""Regenerates the placeholder screenshots for the demo app manifest."""

import json
from pathlib import Path

from PIL import Image, ImageDraw

HERE = Path(__file__).resolve().parent


def render(screen, out):
    img = Image.new("RGB", (180, 320), (246, 246, 240))
    d = ImageDraw.Draw(img)
    d.rectangle([0, 0, 179, 28], fill=(88, 160, 60))
    d.text((8, 9), screen.get("title", screen["id"]), fill=(255, 255, 255))
    d.text((8, 40), screen["id"], fill=(40, 40, 40))
    img.save(out, optimize=False)


def main():
    manifest = json.loads((HERE / "app.json").read_text())
    for screen in manifest["screens"]:
        render(screen, HERE / screen["image"])


if __name__ == "__main__":
    main()
