"""Rate-distortion training of the conditional codec."""
