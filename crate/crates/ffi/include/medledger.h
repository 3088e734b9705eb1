#ifndef MEDLEDGER_H
#define MEDLEDGER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_ARGUMENT = 1,
  ML_STATUS_INVALID_UTF8 = 2,
  ML_STATUS_INVALID_ARGUMENT = 3,
  ML_STATUS_CRYPTO = 4,
  ML_STATUS_PARSE = 5,
  ML_STATUS_NODE = 6,
  ML_STATUS_PANIC = 7,
} MlStatus;

// Opaque embedded node with its gateway.
typedef struct MlGateway MlGateway;

// Opaque signing identity.
typedef struct MlIdentity MlIdentity;

// Heap buffer owned by the caller.
typedef struct MlBuffer {
  uint8_t *data;
  size_t len;
} MlBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into this library on the same thread.
const char *ml_last_error(void);

// Static version string.
const char *ml_version(void);

// # Safety
// `s` must come from this library or be NULL.
void ml_string_free(char *s);

// # Safety
// `buf` must come from this library; it is reset to empty.
void ml_buffer_free(struct MlBuffer *buf);

// SHA-256 of `data`, written to `out` (32 bytes).
//
// # Safety
// `data` must be readable for `len` bytes and `out` writable for 32.
enum MlStatus ml_sha256(const uint8_t *data, size_t len, uint8_t *out);

// Derives an identity deterministically from a non-empty seed.
//
// # Safety
// `seed` must be readable for `len` bytes; `out` must be writable.
enum MlStatus ml_identity_from_seed(const uint8_t *seed, size_t len, struct MlIdentity **out);

// # Safety
// `id` must come from [`ml_identity_from_seed`] or be NULL.
void ml_identity_free(struct MlIdentity *id);

// 40-character hex address.
//
// # Safety
// `id` must be a live handle and `out` writable.
enum MlStatus ml_identity_address(const struct MlIdentity *id, char **out);

// Compressed public key (33 bytes) written to `out`.
//
// # Safety
// `id` must be a live handle and `out` writable for 33 bytes.
enum MlStatus ml_identity_public_key(const struct MlIdentity *id, uint8_t *out);

// Deterministic ECDSA signature (64 bytes `r || s`) written to `out`.
//
// # Safety
// `id` must be a live handle, `msg` readable for `len` bytes and `out`
// writable for 64.
enum MlStatus ml_identity_sign(const struct MlIdentity *id,
                               const uint8_t *msg,
                               size_t len,
                               uint8_t *out);

// Sets `*valid` to 1 when `sig` is a valid signature of `msg` under
// `public_key`, else 0. Malformed signatures are simply invalid; a
// malformed public key is an error.
//
// # Safety
// All pointers must be readable for their stated lengths; `valid` writable.
enum MlStatus ml_verify(const uint8_t *public_key,
                        size_t public_key_len,
                        const uint8_t *msg,
                        size_t msg_len,
                        const uint8_t *sig,
                        size_t sig_len,
                        uint8_t *valid);

// Parses an exported dataset in format `from` ("csv", "xml" or "txt") and
// re-renders it in format `to`.
//
// # Safety
// `input` must be readable for `len` bytes, the format strings valid C
// strings and `out` writable.
enum MlStatus ml_export_convert(const uint8_t *input,
                                size_t len,
                                const char *from,
                                const char *to,
                                struct MlBuffer *out);

// Opens (or creates) the node described by the TOML config at `config_path`
// and wraps it in a gateway. Blocks are produced only by
// [`ml_gateway_commit`].
//
// # Safety
// `config_path` must be a valid C string and `out` writable.
enum MlStatus ml_gateway_open(const char *config_path, struct MlGateway **out);

// # Safety
// `gw` must come from [`ml_gateway_open`] or be NULL.
void ml_gateway_free(struct MlGateway *gw);

// Runs one gateway request. `token` and `body` may be NULL. The HTTP
// status goes to `status` and the JSON (or export) body to `response`.
// Non-2xx responses still return [`MlStatus::Ok`].
//
// # Safety
// `gw` must be a live handle, strings valid C strings, `body` readable for
// `body_len` bytes and the out-parameters writable.
enum MlStatus ml_gateway_request(const struct MlGateway *gw,
                                 const char *method,
                                 const char *path,
                                 const char *token,
                                 const uint8_t *body,
                                 size_t body_len,
                                 uint16_t *status,
                                 struct MlBuffer *response);

// Produces blocks until every pending transaction is confirmed, then
// persists them. Writes the new chain height to `height` when non-NULL.
//
// # Safety
// `gw` must be a live handle; `height` NULL or writable.
enum MlStatus ml_gateway_commit(const struct MlGateway *gw, uint64_t *height);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDLEDGER_H */
