"""KITTI-raw ingestion, manifests and the synthetic fixture."""
