"""Walk through the layer arithmetic on tiny hand-checkable inputs.

Each block builds one layer type, feeds it a short vector and prints the
result next to the value you can work out by hand.
"""

import numpy as np

from emsforecast.layers import (
    Conv3D,
    Dense,
    LocallyConnected2D,
    TransposedConv3D,
    conv3d_forward,
    dense_forward,
    locally_connected_forward,
    tconv3d_forward,
)


def row(v):
    return np.array(v, float).reshape(1, 1, 1, -1)


# A 2-tap convolution along time with same padding adds each value to its right neighbour.
conv = Conv3D(np.ones((1, 1, 1, 1, 2)), [0.0], (1, 1, 1), "same")
print("conv  [1,2,3] * [1,1]      ->", conv3d_forward(conv, row([1, 2, 3])).ravel(), "(expect 3 5 3)")

# Transposed convolution scatters each input value times the kernel into the output.
tconv = TransposedConv3D(np.array([3.0, 5.0]).reshape(1, 1, 1, 1, 2), [0.0], (1, 1, 1))
print("tconv [1,2] with [3,5]     ->", tconv3d_forward(tconv, row([1, 2])).ravel(), "(expect 3 11 10)")
tconv2 = TransposedConv3D(np.ones((1, 1, 1, 1, 3)), [0.0], (1, 1, 2))
print("tconv stride 2, [1,1]      ->", tconv3d_forward(tconv2, row([1, 1])).ravel(), "(expect 1 1 2 1 1)")

# A locally connected layer gives every cell its own weight and bias.
lc = LocallyConnected2D(np.array([2.0, 3.0]).reshape(2, 1, 1, 1, 1, 1), np.array([1.0, -1.0]).reshape(1, 2, 1))
print("local [[4],[5]]            ->", locally_connected_forward(lc, np.array([[[4.0], [5.0]]])).ravel(),
      "(expect 9 14)")

dense = Dense([[1.0, 2.0], [3.0, 4.0]], [1.0])
print("dense W=[[1,2],[3,4]], b=1 ->", dense_forward(dense, [1.0, 1.0]), "(expect 4 8)")

print()
print("parameter counts")
print("  conv 3x3x3, 4 -> 8 maps:     ", Conv3D.init(4, 8, (3, 3, 3)).param_count())
print("  local 1x1, 3 maps on 2x2:    ", LocallyConnected2D.init(3, 1, (1, 1), (2, 2)).param_count())
print("  dense 10 -> 5:               ", Dense.init(10, 5).param_count())
