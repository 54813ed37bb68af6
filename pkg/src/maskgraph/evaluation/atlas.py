"""SVG drawings of landmark graphs over their masks."""

import colorsys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import numpy.typing as npt

from maskgraph.contours import extract_organ_contours
from maskgraph.topology.graph import LevelGraph

_ORGAN_FILLS = ("#c8d7ea", "#f1d2c2", "#d4e9c9", "#e7d3ea", "#f3ecc0")


def _index_color(index: int, count: int) -> str:
    r, g, b = colorsys.hsv_to_rgb(index / max(count, 1), 0.85, 0.9)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def atlas_svg(
    landmarks: npt.ArrayLike,
    graph: LevelGraph,
    mask: npt.ArrayLike | None = None,
    size: tuple[int, int] | None = None,
    scale: float = 8.0,
) -> ET.Element:
    """Build the SVG element of one landmark graph.

    Organ outlines of ``mask`` are drawn as filled polygons, graph edges as
    lines and every node as a circle colored by its index. Nodes on more than
    one organ boundary are drawn larger with a dark outline.

    Args:
        landmarks: (N, 2) node positions in pixel units
        graph: level graph supplying edges and membership
        mask: optional label mask drawn underneath
        size: (height, width) in pixels; taken from ``mask`` when omitted
        scale: SVG units per pixel
    """
    points = np.asarray(landmarks, dtype=np.float64) * scale
    if size is None:
        size = np.asarray(mask).shape if mask is not None else (64, 64)
    height, width = size
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width * scale),
        height=str(height * scale),
        viewBox=f"0 0 {width * scale} {height * scale}",
    )
    ET.SubElement(svg, "rect", width="100%", height="100%", fill="white")

    if mask is not None:
        labels = np.asarray(mask)
        organs = sorted(int(o) for o in np.unique(labels) if o)
        for k, (organ, contour) in enumerate(extract_organ_contours(labels, organs).items()):
            outline = " ".join(f"{x:.2f},{y:.2f}" for x, y in contour.centers() * scale)
            ET.SubElement(
                svg,
                "polygon",
                points=outline,
                fill=_ORGAN_FILLS[k % len(_ORGAN_FILLS)],
                stroke="#888888",
                **{"class": f"organ organ-{organ}"},
            )

    for i, j in graph.edges:
        (x1, y1), (x2, y2) = points[i], points[j]
        ET.SubElement(
            svg,
            "line",
            x1=f"{x1:.2f}",
            y1=f"{y1:.2f}",
            x2=f"{x2:.2f}",
            y2=f"{y2:.2f}",
            stroke="#333333",
            **{"stroke-width": f"{scale / 8:.2f}", "class": "edge"},
        )

    for v, (x, y) in enumerate(points):
        shared = len(graph.membership[v]) > 1
        attrs = {
            "cx": f"{x:.2f}",
            "cy": f"{y:.2f}",
            "r": f"{scale * (0.6 if shared else 0.4):.2f}",
            "fill": _index_color(v, len(points)),
            "class": "node shared" if shared else "node",
        }
        if shared:
            attrs.update({"stroke": "black", "stroke-width": f"{scale / 8:.2f}"})
        circle = ET.SubElement(svg, "circle", attrs)
        ET.SubElement(circle, "title").text = f"node {v}, organs {sorted(graph.membership[v])}"
    return svg


def export_atlas(
    landmarks: npt.ArrayLike,
    graph: LevelGraph,
    path: Path,
    mask: npt.ArrayLike | None = None,
    size: tuple[int, int] | None = None,
) -> Path:
    """Write :func:`atlas_svg` to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tree = ET.ElementTree(atlas_svg(landmarks, graph, mask, size))
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)
    return path
