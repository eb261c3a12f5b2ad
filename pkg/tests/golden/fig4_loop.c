/* generated C99-style source */
#include <stdint.h>
#include <stdlib.h>
#include <math.h>

#define MIN(a, b) ((a) < (b) ? (a) : (b))
#define MAX(a, b) ((a) > (b) ? (a) : (b))

void fig4_loop(int64_t NI, double *C /* NI */)
{
    int64_t i = 0;

    s0:;
    {
    }
    { i = 0; goto loop0_guard; }
    loop0_guard:;
    {
    }
    if ((i < NI)) { goto s1; }
    if ((i >= NI)) { goto exit; }
    goto __done;
    s1:;
    {
        C[(i)] = (C[(i)] + 1.0);
    }
    { i = (i + 1); goto loop0_guard; }
    exit:;
    {
    }
    goto __done;
    __done:;
}
