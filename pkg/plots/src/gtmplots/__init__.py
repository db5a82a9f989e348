"""Figure rendering for gtm run logs."""

from gtmplots.figures import (Run, RunFormatError, group_runs, load_run,
                              plot_frame_kl_profile, plot_three_panel,
                              structural_summary)

__version__ = "0.1.0"

__all__ = ["Run", "RunFormatError", "group_runs", "load_run",
           "plot_frame_kl_profile", "plot_three_panel", "structural_summary",
           "__version__"]
