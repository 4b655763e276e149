"""
Refine3D - multi-view voxel reconstruction with attention fusion and a 3D U-Net refiner,
trained with the three-phase joint-train / separate-optimize schedule.
"""

__version__ = "0.1.0"
