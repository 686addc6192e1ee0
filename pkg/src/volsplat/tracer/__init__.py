from .api import (Absorb, Escape, PathTraceConfig, Scatter, delta_track,
                  delta_track_event_counts, emission_absorption_render,
                  hg_pdf, hg_sample, iso_intersect, nee_light_sample,
                  path_trace)

__all__ = [
    "Absorb", "Escape", "PathTraceConfig", "Scatter", "delta_track",
    "delta_track_event_counts", "emission_absorption_render", "hg_pdf",
    "hg_sample", "iso_intersect", "nee_light_sample", "path_trace",
]
