// Generated by safegpu. Do not edit.
#include <algorithm>
#include <cuda_runtime.h>

__global__ void transpose(const double* __restrict__ input, double* __restrict__ output) {
  {
    __shared__ double tmp[1024];
    {
      for (int i = 0; i < 4; i++) {
        tmp[(i * 8 + threadIdx.y) * 32 + threadIdx.x] = input[(blockIdx.y * 32 + i * 8 + threadIdx.y) * 2048 + blockIdx.x * 32 + threadIdx.x];
      }
      __syncthreads();
      for (int i = 0; i < 4; i++) {
        output[(blockIdx.x * 32 + i * 8 + threadIdx.y) * 2048 + blockIdx.y * 32 + threadIdx.x] = tmp[threadIdx.x * 32 + i * 8 + threadIdx.y];
      }
    }
  }
}
