"""The analysis transform used as a perceptual loss network."""
