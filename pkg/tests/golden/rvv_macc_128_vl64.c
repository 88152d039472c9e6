#include <riscv_vector.h>
#include <stddef.h>
#include <stdint.h>

void macc_128_float32_rvv(const float *A, const float *B, float *C) {
  size_t vl;
  vfloat32m8_t v16_f32m8;
  vfloat32m8_t v24_f32m8;
  vfloat32m8_t v8_f32m8;
  for (int n0 = 0; n0 < 2; ++n0) {
    vl = __riscv_vsetvl_e32m8(64);
    v8_f32m8 = __riscv_vle32_v_f32m8(&A[64*n0], vl);
    v16_f32m8 = __riscv_vle32_v_f32m8(&B[64*n0], vl);
    v24_f32m8 = __riscv_vle32_v_f32m8(&C[64*n0], vl);
    v24_f32m8 = __riscv_vfmacc_vv_f32m8(v24_f32m8, v8_f32m8, v16_f32m8, vl);
    __riscv_vse32_v_f32m8(&C[64*n0], v24_f32m8, vl);
  }
}
