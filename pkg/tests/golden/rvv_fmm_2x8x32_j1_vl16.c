#include <riscv_vector.h>
#include <stddef.h>
#include <stdint.h>

void matmul_2x8x32_float32_rvv(const float *A, const float *B, const float *D, float *C) {
  size_t vl;
  vfloat32m8_t v16_f32m8;
  vfloat32m1_t v1_f32m1;
  vfloat32m8_t v24_f32m8;
  vfloat32m1_t v2_f32m1;
  vfloat32m1_t v3_f32m1;
  vfloat32m8_t v8_f32m8;
  for (int m = 0; m < 2; ++m) {
    for (int n = 0; n < 8; ++n) {
      C[8*m + n] = D[8*m + n];
    }
  }
  for (int n0 = 0; n0 < 8; ++n0) {
    for (int m = 0; m < 2; ++m) {
      for (int k0 = 0; k0 < 2; ++k0) {
        vl = __riscv_vsetvl_e32m8(16);
        v8_f32m8 = __riscv_vle32_v_f32m8(&A[16*k0 + 32*m], vl);
        vl = __riscv_vsetvl_e32m1(1);
        v2_f32m1 = __riscv_vle32_v_f32m1(&C[8*m + n0], vl);
        v1_f32m1 = __riscv_vfmv_s_f_f32m1(0.0f, vl);
        vl = __riscv_vsetvl_e32m8(16);
        v16_f32m8 = __riscv_vle32_v_f32m8(&B[16*k0 + 32*n0], vl);
        v24_f32m8 = __riscv_vfmul_vv_f32m8(v8_f32m8, v16_f32m8, vl);
        v1_f32m1 = __riscv_vfredusum_vs_f32m8_f32m1(v24_f32m8, v1_f32m1, vl);
        vl = __riscv_vsetvl_e32m1(1);
        v3_f32m1 = __riscv_vmv_v_v_f32m1(v1_f32m1, vl);
        v3_f32m1 = __riscv_vfadd_vv_f32m1(v3_f32m1, v2_f32m1, vl);
        __riscv_vse32_v_f32m1(&C[8*m + n0], v3_f32m1, vl);
      }
    }
  }
}
