# Voxel losses and IoU metrics
