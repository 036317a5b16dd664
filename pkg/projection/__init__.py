"""LiDAR projection into equalized depth rasters."""
