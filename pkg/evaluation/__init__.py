"""Rate-distortion metrics, model evaluation and reports."""
