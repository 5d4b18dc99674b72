"""Single-pixel imaging with a detector array and multi-frame super-resolution."""
