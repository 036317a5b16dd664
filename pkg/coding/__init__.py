"""Range coding and the on-disk bitstream format."""
