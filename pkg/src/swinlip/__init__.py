"""SwinLip visual speech encoder."""
